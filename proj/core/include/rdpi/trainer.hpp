#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "rdpi/data.hpp"
#include "rdpi/denoiser.hpp"
#include "rdpi/forward_process.hpp"
#include "rdpi/initial_imputer.hpp"
#include "rdpi/rng.hpp"
#include "rdpi/schedule.hpp"

namespace rdpi {

enum class MaskingMode { in_sample, out_of_sample };

struct Ablations {
  bool no_cond_forward = false;    // z0c = 0 in the forward process and samplers
  bool no_residual = false;        // diffuse -x^m directly; readout ignores x_init
  bool freeze_initial = false;     // no gradient into the initial imputer
  bool skip_pretrain = false;
  bool predict_x0 = false;         // network predicts z0m instead of eps
  bool flip_residual_sign = false; // z0m = x - x_init, readout x_init + z0m

  /// Comma-separated flag names; "none" or empty clears all.
  static Ablations parse(std::string_view list);
  [[nodiscard]] std::string to_string() const;
};

struct TrainConfig {
  int diffusion_steps = 50;
  double beta_min = 1e-4;
  double beta_max = 0.2;
  double lambda = 0.2;
  double learning_rate = 1e-3;
  int epochs = 50;
  int pretrain_epochs = 20;
  int batch_size = 16;
  int window = 24;
  int window_stride = 12;
  std::uint64_t seed = 0;
  MaskingMode masking = MaskingMode::out_of_sample;
  double remask_p = 0.25;
  InitialStrategy initial = InitialStrategy::trainable;
  int initial_hidden = 16;
  LossNorm init_norm = LossNorm::l1;
  int d = 32;
  int conv_width = 3;
  int heads = 4;
  Ablations ablation;

  void validate() const;
  [[nodiscard]] std::string to_json() const;
  static TrainConfig from_json(std::string_view text);
};

/// Everything needed to impute: schedule, both models (in normalized units),
/// the normalizer and the config they were trained with.
struct Checkpoint {
  static constexpr std::uint32_t format_version = 1;

  NoiseSchedule schedule = NoiseSchedule::from_betas({0.5});
  DenoiserParams denoiser;
  InitialModel initial;
  Normalizer normalizer;
  TrainConfig config;
};

/// Binary container: "RDPICKPT", u32 version, u64-length config JSON, u32
/// array count, then per array u32 name length, name, u64 rows, u64 cols and
/// rows * cols little-endian float64 in row-major order. A JSON sidecar of the
/// config is written next to it as <path>.json.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// ---- windows and batches -------------------------------------------------------

/// Window start rows: 0, stride, 2*stride, ... plus a final window flush with
/// the end of the series.
std::vector<Eigen::Index> window_starts(Eigen::Index length, int window, int stride);

/// One training example in normalized units.
struct WindowItem {
  Grid values;     // zero where not observed
  Mask observed;
  Mask cond;       // cells the models may condition on
  Mask target;     // cells entering both losses
  int t = 1;
  Grid eps;
  std::vector<int> window_index;
};

struct JointModel {
  DenoiserParams denoiser;
  InitialModel initial;
};

struct JointLoss {
  double l_simple = 0.0;
  double l_init = 0.0;
  double l_joint = 0.0;
};

/// Draws targets, steps and noise for the windows starting at `starts`.
std::vector<WindowItem> draw_batch(const MaskedGrid& normalized, std::span<const Eigen::Index> starts,
                                   const TrainConfig& config, Rng& rng);

/// Joint loss L_simple + lambda * L_init on a batch. When `grads` is given it
/// receives the gradient of L_joint for every tensor of both models.
JointLoss joint_loss(const JointModel& model, std::span<const WindowItem> batch, const Graph& graph,
                     const NoiseSchedule& sched, const TrainConfig& config, JointModel* grads = nullptr);

/// Plain gradient descent step of size lr.
void sgd_step(JointModel& model, const JointModel& grads, double lr, bool update_initial);

struct LogRow {
  long step = 0;
  double l_simple = 0.0;
  double l_init = 0.0;
  double l_joint = 0.0;
};

struct PretrainReport {
  std::vector<double> eval_loss;  // per epoch on a fixed held-out draw, index 0 = before training
  double initial_loss = 0.0;
  double best_loss = 0.0;
};

/// Minimizes the initial-stage loss on re-masked training windows and returns
/// the best parameters seen. No-op for strategies without parameters or when
/// skip_pretrain is set. `normalized` must already be z-scored.
InitialModel pretrain_initial(const MaskedGrid& normalized, const Graph& graph, const TrainConfig& config,
                              InitialModel model, Rng& rng, PretrainReport* report = nullptr);

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LogRow> log;
  PretrainReport pretrain;
};

/// Optional per-step observer (step, losses).
using TrainObserver = std::function<void(const LogRow&)>;

/// Full training run: normalization, optional pretraining, joint training.
/// Models condition only on data.visible(). Eval cells are read only in
/// in_sample mode, where they are the training targets.
TrainResult train_joint(const MaskedGrid& data, const Graph& graph, const TrainConfig& config,
                        const TrainObserver& observer = {});

void save_train_log(const std::filesystem::path& path, const std::vector<LogRow>& log);

}  // namespace rdpi
