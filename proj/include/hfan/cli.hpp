#pragma once

#include "hfan/corpus.hpp"
#include "hfan/training.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace hfan::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Bad or missing flags, detected before any work starts.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Emit { Json, Csv };

struct CliConfig {
  std::string command;
  std::optional<std::filesystem::path> train, valid, test;
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> word_vectors;
  std::filesystem::path out_dir = ".";
  std::string dataset;
  bool resume = false;
  double threshold = 0.5;
  std::optional<Emit> emit;
  SyntheticSpec synth;
  TrainConfig train_config;
};

/// Per-command flag checks; throws UsageError.
void validate(const CliConfig& config);

/// `<checkpoint>.vocab`, `.users` and `.products` live next to the checkpoint.
std::filesystem::path vocab_stem(const std::filesystem::path& checkpoint);

int cmd_synth(const CliConfig& config, std::ostream& out);
int cmd_train(const CliConfig& config, std::ostream& out);
int cmd_cv(const CliConfig& config, std::ostream& out);
int cmd_eval(const CliConfig& config, std::ostream& out);
int cmd_predict(const CliConfig& config, std::ostream& out);

/// Parses `args` (without the program name), dispatches, and maps failures to
/// exit codes: 0 success, 1 runtime or data error, 2 usage error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace hfan::cli
