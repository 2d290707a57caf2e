#include "hfan/cli.hpp"

#include "hfan/checkpoint.hpp"
#include "hfan/evaluation.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iostream>

namespace hfan::cli {

namespace {

nlohmann::json number_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

const std::filesystem::path& require(const std::optional<std::filesystem::path>& p, const char* flag,
                                     const std::string& command) {
  if (!p) throw UsageError(command + " requires " + flag);
  return *p;
}

void check_positive(int v, const char* flag) {
  if (v <= 0) throw UsageError(std::string(flag) + " must be positive");
}

struct LoadedModel {
  Checkpoint checkpoint;
  Vocabulary vocab;
};

LoadedModel load_model(const std::filesystem::path& path) {
  LoadedModel m{load_checkpoint(path), Vocabulary::load(vocab_stem(path))};
  if (m.vocab.token_count() != m.checkpoint.vocab_size || m.vocab.user_count() != m.checkpoint.users ||
      m.vocab.product_count() != m.checkpoint.products) {
    throw std::runtime_error("vocabulary files next to " + path.string() +
                             " do not match the checkpoint");
  }
  return m;
}

Checkpoint to_checkpoint(const TrainConfig& config, const Vocabulary& vocab, const TrainerState& state) {
  Checkpoint ck;
  ck.config = config;
  ck.vocab_size = vocab.token_count();
  ck.users = vocab.user_count();
  ck.products = vocab.product_count();
  ck.state = state;
  return ck;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::filesystem::path vocab_stem(const std::filesystem::path& checkpoint) { return checkpoint; }

void validate(const CliConfig& c) {
  const std::string& cmd = c.command;
  const TrainConfig& tc = c.train_config;
  if (cmd == "synth") {
    check_positive(c.synth.n_reviews, "--n-reviews");
    if (c.synth.n_users < 2) throw UsageError("--n-users must be at least 2");
    check_positive(c.synth.n_products, "--n-products");
    check_positive(c.synth.n_templates, "--n-templates");
    if (!(c.synth.spam_rate > 0.0 && c.synth.spam_rate < 1.0)) {
      throw UsageError("--spam-rate must lie strictly between 0 and 1");
    }
    const bool explicit_paths = c.train || c.valid || c.test;
    if (explicit_paths && !(c.train && c.valid && c.test)) {
      throw UsageError("synth needs all of --train, --valid and --test, or none (use --out)");
    }
    return;
  }
  if (cmd == "train" || cmd == "cv") {
    require(c.train, "--train", cmd);
    if (cmd == "train") require(c.checkpoint, "--checkpoint", cmd);
    try {
      tc.hp.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    if (tc.epochs < 0) throw UsageError("--epochs must be non-negative");
    if (tc.batch_size < 2) throw UsageError("--batch-size must be at least 2");
    if (!(tc.lr > 0.0)) throw UsageError("--lr must be positive");
    if (!(tc.lr_decay > 0.0 && tc.lr_decay <= 1.0)) throw UsageError("--lr-decay must lie in (0, 1]");
    if (!(tc.rho > 0.0 && tc.rho < 1.0)) throw UsageError("--rho must lie in (0, 1)");
    if (!(tc.eps > 0.0)) throw UsageError("--eps must be positive");
    check_positive(tc.patience, "--patience");
    check_positive(tc.min_count, "--min-count");
    if (cmd == "cv") {
      if (tc.folds < 2) throw UsageError("--folds must be at least 2");
      if (tc.grid_r.empty() || tc.grid_beta.empty()) throw UsageError("grids must not be empty");
      for (int r : tc.grid_r) {
        if (r < 1) throw UsageError("--grid-r values must be positive");
      }
      for (double b : tc.grid_beta) {
        if (!(b >= 0.0) || !std::isfinite(b)) throw UsageError("--grid-beta values must be non-negative");
      }
    }
    if (c.resume && cmd == "cv") throw UsageError("--resume applies to train only");
    return;
  }
  if (cmd == "eval" || cmd == "predict") {
    require(c.checkpoint, "--checkpoint", cmd);
    require(c.test, "--test", cmd);
    if (!(c.threshold >= 0.0 && c.threshold <= 1.0)) throw UsageError("--threshold must lie in [0, 1]");
    return;
  }
  throw UsageError("unknown command '" + cmd + "'");
}

int cmd_synth(const CliConfig& c, std::ostream& out) {
  const auto reviews = generate_synthetic(c.train_config.seed, c.synth);
  const RawSplit split = split_80_10_10(reviews, c.train_config.seed);
  std::filesystem::path train = c.out_dir / "train.jsonl";
  std::filesystem::path valid = c.out_dir / "valid.jsonl";
  std::filesystem::path test = c.out_dir / "test.jsonl";
  if (c.train) {
    train = *c.train;
    valid = *c.valid;
    test = *c.test;
  }
  for (const auto& p : {train, valid, test}) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  }
  write_jsonl(train, split.train);
  write_jsonl(valid, split.validation);
  write_jsonl(test, split.test);

  long spam = 0;
  for (const auto& r : reviews) spam += r.label;
  nlohmann::json summary;
  summary["train"] = split.train.size();
  summary["valid"] = split.validation.size();
  summary["test"] = split.test.size();
  summary["spam"] = spam;
  summary["seed"] = c.train_config.seed;
  out << summary.dump() << '\n';
  return kExitOk;
}

int cmd_train(const CliConfig& c, std::ostream& out) {
  const auto& ckpt_path = *c.checkpoint;
  const auto raw_train = load_jsonl(*c.train);
  const auto raw_valid = c.valid ? load_jsonl(*c.valid) : std::vector<RawReview>{};
  if (raw_train.empty()) throw std::runtime_error("training corpus is empty");

  TrainConfig config = c.train_config;
  Vocabulary vocab;
  TrainerState state;
  if (c.resume) {
    LoadedModel loaded = load_model(ckpt_path);
    const int epochs = config.epochs;
    config = loaded.checkpoint.config;
    config.epochs = epochs;
    vocab = std::move(loaded.vocab);
    state = std::move(loaded.checkpoint.state);
  } else {
    vocab = build_vocab(raw_train, config.min_count);
    state = init_training(config, vocab.token_count(), vocab.user_count(), vocab.product_count());
    if (c.word_vectors) load_word_vectors(*c.word_vectors, vocab, state.params);
    if (ckpt_path.has_parent_path()) std::filesystem::create_directories(ckpt_path.parent_path());
    vocab.save(vocab_stem(ckpt_path));
  }

  const auto limits = config.hp.limits();
  const auto train_set = encode_all(raw_train, vocab, limits);
  const auto valid_set = encode_all(raw_valid, vocab, limits);
  train(train_set, valid_set, state, config, [&](const EpochMetrics& m, const TrainerState&) {
    nlohmann::json line;
    line["epoch"] = m.epoch;
    line["lr"] = m.lr;
    line["classification_loss"] = m.classification;
    line["relation_loss"] = m.relation;
    line["total_loss"] = m.total;
    line["valid_f1"] = number_or_null(m.valid_f1);
    out << line.dump() << '\n' << std::flush;
  });
  save_checkpoint(ckpt_path, to_checkpoint(config, vocab, state));
  return kExitOk;
}

int cmd_cv(const CliConfig& c, std::ostream& out) {
  const TrainConfig& config = c.train_config;
  const auto raw = load_jsonl(*c.train);
  const Vocabulary vocab = build_vocab(raw, config.min_count);
  const auto encoded = encode_all(raw, vocab, config.hp.limits());
  const bool json = c.emit == Emit::Json;

  if (!json) out << "r,beta,fold,F1\n";
  nlohmann::json rows = nlohmann::json::array();
  const CvResult result = cross_validate(
      encoded, vocab.token_count(), vocab.user_count(), vocab.product_count(), config,
      [&](const CvRow& row) {
        if (json) {
          rows.push_back({{"r", row.r}, {"beta", row.beta}, {"fold", row.fold}, {"f1", row.f1}});
        } else {
          out << row.r << ',' << format_double(row.beta) << ',' << row.fold << ','
              << format_double(row.f1) << '\n'
              << std::flush;
        }
      });
  if (json) {
    nlohmann::json doc;
    doc["rows"] = rows;
    doc["selected"] = {{"r", result.best_r}, {"beta", result.best_beta}, {"mean_f1", result.best_mean_f1}};
    out << doc.dump() << '\n';
  } else {
    out << "selected,r=" << result.best_r << ",beta=" << format_double(result.best_beta)
        << ",mean_F1=" << format_double(result.best_mean_f1) << '\n';
  }
  return kExitOk;
}

int cmd_eval(const CliConfig& c, std::ostream& out) {
  const LoadedModel model = load_model(*c.checkpoint);
  const HyperParams& hp = model.checkpoint.config.hp;
  const auto reviews = encode_all(load_jsonl(*c.test), model.vocab, hp.limits());
  const MetricReport report = evaluate(model.checkpoint.state.params, hp, reviews, c.threshold);
  if (c.emit == Emit::Csv) {
    const std::string dataset = c.dataset.empty() ? c.test->stem().string() : c.dataset;
    out << csv_header() << '\n' << csv_row(report, dataset, model.checkpoint.config.seed) << '\n';
  } else {
    out << to_json(report).dump() << '\n';
  }
  return kExitOk;
}

int cmd_predict(const CliConfig& c, std::ostream& out) {
  const LoadedModel model = load_model(*c.checkpoint);
  const HyperParams& hp = model.checkpoint.config.hp;
  const auto reviews = encode_all(load_jsonl(*c.test), model.vocab, hp.limits());
  for (const ScoredExample& s : score_reviews(model.checkpoint.state.params, reviews, hp)) {
    nlohmann::json line;
    line["review_id"] = s.review_id;
    line["spam_score"] = s.spam_score;
    line["predicted_label"] = s.spam_score >= c.threshold ? 1 : 0;
    out << line.dump() << '\n';
  }
  return kExitOk;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CliConfig c;
  TrainConfig& tc = c.train_config;
  HyperParams& hp = tc.hp;

  CLI::App app{"Opinion-spam detection with hierarchical fusion attention", "hfan"};
  app.require_subcommand(1);
  std::string emit;

  const auto corpus_flags = [&](CLI::App* sub) {
    sub->add_option("--train", c.train, "training corpus (JSONL)");
    sub->add_option("--valid", c.valid, "validation corpus (JSONL)");
    sub->add_option("--test", c.test, "test corpus (JSONL)");
  };
  const auto model_flags = [&](CLI::App* sub) {
    sub->add_option("--d", hp.d, "embedding width");
    sub->add_option("--m", hp.m, "attention units per sentence encoder");
    sub->add_option("--r", hp.r, "context radius");
    sub->add_option("--beta", hp.beta, "weight of the relation loss");
    sub->add_option("--n-neg", hp.n_neg, "negative triplets per review");
    sub->add_option("--L", hp.L, "sentences per review");
    sub->add_option("--T", hp.T, "tokens per sentence");
    sub->add_option("--max-total-len", hp.max_total, "token cap per review");
    sub->add_flag("--freeze-word-emb", hp.freeze_word_emb, "keep word embeddings fixed");
    sub->add_flag("--ablate-entities", hp.ablate_entities,
                  "pin user and product embeddings at zero");
    sub->add_option("--epochs", tc.epochs, "epoch budget");
    sub->add_option("--batch-size", tc.batch_size, "reviews per batch");
    sub->add_option("--seed", tc.seed, "random seed");
    sub->add_option("--lr", tc.lr, "initial learning rate");
    sub->add_option("--lr-decay", tc.lr_decay, "per-epoch learning-rate factor");
    sub->add_option("--rho", tc.rho, "Adadelta decay");
    sub->add_option("--eps", tc.eps, "Adadelta epsilon");
    sub->add_option("--patience", tc.patience, "early-stopping patience in epochs");
    sub->add_option("--min-count", tc.min_count, "minimum token frequency");
  };

  CLI::App* synth = app.add_subcommand("synth", "write a synthetic train/valid/test corpus");
  synth->add_option("--n-reviews", c.synth.n_reviews, "number of reviews");
  synth->add_option("--spam-rate", c.synth.spam_rate, "fraction of spam reviews");
  synth->add_option("--n-users", c.synth.n_users, "number of users");
  synth->add_option("--n-products", c.synth.n_products, "number of products");
  synth->add_option("--n-templates", c.synth.n_templates, "number of spam templates");
  synth->add_option("--seed", tc.seed, "random seed");
  synth->add_option("--out", c.out_dir, "output directory for train/valid/test.jsonl");
  corpus_flags(synth);

  CLI::App* train_cmd = app.add_subcommand("train", "train a model and write a checkpoint");
  corpus_flags(train_cmd);
  model_flags(train_cmd);
  train_cmd->add_option("--checkpoint", c.checkpoint, "checkpoint path");
  train_cmd->add_option("--word-vectors", c.word_vectors, "pretrained vectors (token v1 .. vd)");
  train_cmd->add_flag("--resume", c.resume, "continue from --checkpoint up to --epochs");

  CLI::App* cv = app.add_subcommand("cv", "cross-validate the (r, beta) grid");
  corpus_flags(cv);
  model_flags(cv);
  cv->add_option("--grid-r", tc.grid_r, "radius grid")->delimiter(',');
  cv->add_option("--grid-beta", tc.grid_beta, "beta grid")->delimiter(',');
  cv->add_option("--folds", tc.folds, "number of folds");
  cv->add_option("--emit", emit, "output format")->check(CLI::IsMember({"json", "csv"}));

  for (const char* name : {"eval", "predict"}) {
    CLI::App* sub = app.add_subcommand(
        name, std::string(name) == "eval" ? "report metrics on --test" : "score each review in --test");
    corpus_flags(sub);
    sub->add_option("--checkpoint", c.checkpoint, "checkpoint path");
    sub->add_option("--threshold", c.threshold, "spam decision threshold");
    if (std::string(name) == "eval") {
      sub->add_option("--emit", emit, "output format")->check(CLI::IsMember({"json", "csv"}));
      sub->add_option("--dataset", c.dataset, "dataset label for CSV rows");
    }
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }
  c.command = app.get_subcommands().front()->get_name();
  if (emit == "json") c.emit = Emit::Json;
  if (emit == "csv") c.emit = Emit::Csv;

  try {
    validate(c);
  } catch (const UsageError& e) {
    err << "hfan " << c.command << ": " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (c.command == "synth") return cmd_synth(c, out);
    if (c.command == "train") return cmd_train(c, out);
    if (c.command == "cv") return cmd_cv(c, out);
    if (c.command == "eval") return cmd_eval(c, out);
    return cmd_predict(c, out);
  } catch (const std::exception& e) {
    err << "hfan " << c.command << ": " << e.what() << '\n';
    return kExitRuntime;
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace hfan::cli
