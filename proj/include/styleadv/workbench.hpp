#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "styleadv/attack_harness.hpp"
#include "styleadv/data_pipeline.hpp"
#include "styleadv/feature_probe.hpp"
#include "styleadv/io.hpp"

namespace styleadv::workbench {

inline constexpr int kConfigFormatVersion = 1;

/// The complete configuration document with every default filled in.
io::Json default_config();

/// Sets the value at a dotted path ("engine.beta=1e4"). The value is parsed
/// as JSON when possible and taken as a string otherwise.
void apply_override(io::Json& doc, std::string_view assignment);

/// Overlays `user` on the defaults, applies the overrides, and validates the
/// result. Unknown keys, wrong types and out-of-range values raise
/// ValidationError naming the dotted path.
io::Json resolve_config(const io::Json& user, const std::vector<std::string>& overrides = {});

/// Range checks on a fully resolved document.
void validate_config(const io::Json& cfg);

/// Reads a config file; a run manifest is accepted too (its resolved config
/// is used), so any finished run can be replayed.
io::Json read_config_file(const std::filesystem::path& path);

/// The run directory: config/, checkpoints/, records/, reports/, grids/.
class RunDir {
 public:
  explicit RunDir(std::filesystem::path root) : root_(std::move(root)) {}
  void create() const;
  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path config() const { return root_ / "config"; }
  std::filesystem::path checkpoints() const { return root_ / "checkpoints"; }
  std::filesystem::path records() const { return root_ / "records"; }
  std::filesystem::path reports() const { return root_ / "reports"; }
  std::filesystem::path grids() const { return root_ / "grids"; }
  std::filesystem::path checkpoint(const std::string& model) const { return checkpoints() / (model + ".ckpt"); }

 private:
  std::filesystem::path root_;
};

/// Written with status "running" when a command starts and rewritten with
/// status "complete" as its last action, so interrupted runs are detectable.
class RunManifest {
 public:
  RunManifest(const RunDir& dir, std::string command, io::Json config);

  void add_input(const std::string& name, const std::string& fingerprint);
  void add_output(const std::filesystem::path& path);
  void note(const std::string& key, io::Json value);
  void complete();

  const std::filesystem::path& path() const { return path_; }
  const io::Json& doc() const { return doc_; }

 private:
  void write() const;

  RunDir dir_;
  std::filesystem::path path_;
  io::Json doc_;
};

/// Orchestrates the subcommands over one resolved configuration.
class Workbench {
 public:
  explicit Workbench(io::Json config);
  ~Workbench();

  void prepare_data();
  void train(const std::vector<std::string>& models = {});
  void probe_features();
  void select_styles();
  void attack(const std::string& mode = "all");
  void sweep(const std::string& kind = "all");
  void transfer_matrix();

  const io::Json& config() const { return cfg_; }
  const RunDir& run_dir() const { return dir_; }

  // Building blocks shared by the commands (and the acceptance checks).
  Dataset cifar(Split split);
  Dataset feature_dataset(DatasetKind kind);
  Dataset eval_set();
  Classifier& model(const std::string& name);
  bool has_model(const std::string& name) const;
  Classifier& ensure_model(const std::string& name);
  StyleAttacker& attacker();

 private:
  struct State;

  std::filesystem::path dataset_cache(const std::string& stem, const io::Json& key) const;
  Classifier train_model(const std::string& name);
  void save_report(RunManifest& m, const EvalReport& r, const std::string& name);
  void save_grids(RunManifest& m, const EvalReport& r, const std::string& name);

  io::Json cfg_;
  RunDir dir_;
  std::unique_ptr<State> state_;
};

/// Renders every report under <run_dir>/reports as text tables, from the
/// persisted JSON alone. Throws MissingPrerequisiteError when there is none.
std::string render_reports(const std::filesystem::path& run_dir);

/// Text table for one report.
std::string render_report(const EvalReport& r);

/// Command-line entry point; returns the process exit code (0 success,
/// 1 validation error, 2 runtime error).
int run_cli(int argc, char** argv);

}  // namespace styleadv::workbench
