#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lmpet/image.hpp"
#include "lmpet/projector.hpp"

namespace lmpet::lmpd {

inline constexpr int kDualInputs = 3;
inline constexpr int kDualHidden = 32;
inline constexpr int kPrimalInputs = 2;
inline constexpr int kPrimalChannels = 64;
inline constexpr int kKernel = 3;
inline constexpr double kPreluInit = 0.25;

/// Location of one named parameter array inside the flat parameter vector.
struct ParamBlock {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
  bool operator==(const ParamBlock&) const = default;
};

/// Parameter blocks of one unrolled layer, in storage order.
enum class Block : int {
  kDualFc1Weight,  // 32 x 3
  kDualFc1Bias,    // 32
  kDualPrelu1,     // 1
  kDualFc2Weight,  // 32 x 32
  kDualFc2Bias,    // 32
  kDualPrelu2,     // 1
  kDualFc3Weight,  // 1 x 32
  kDualFc3Bias,    // 1
  kConv1Weight,    // 64 x 2 x 3 x 3
  kConv1Bias,      // 64
  kPrelu1,         // 1
  kConv2Weight,    // 64 x 64 x 3 x 3
  kConv2Bias,      // 64
  kPrelu2,         // 1
  kConv3Weight,    // 64 x 64 x 3 x 3
  kConv3Bias,      // 64
  kPrelu3,         // 1
  kConv4Weight,    // 1 x 64 x 3 x 3
  kConv4Bias,      // 1
  kCount
};

/// K unrolled primal-dual layers with independent parameters. All
/// parameters live in one flat vector so that gradients and optimizer state
/// share its layout.
class LmpdModel {
 public:
  LmpdModel() = default;
  /// Zero-filled parameters (PReLU slopes included).
  LmpdModel(int layers, Grid grid);

  /// Uniform fan-in initialisation, PReLU slopes 0.25, zero final conv.
  static LmpdModel initialized(int layers, Grid grid, std::uint64_t seed);

  [[nodiscard]] int layers() const { return layers_; }
  [[nodiscard]] const Grid& grid() const { return grid_; }
  [[nodiscard]] std::span<double> params() { return params_; }
  [[nodiscard]] std::span<const double> params() const { return params_; }
  [[nodiscard]] std::size_t size() const { return params_.size(); }
  [[nodiscard]] const std::vector<ParamBlock>& blocks() const { return blocks_; }

  [[nodiscard]] const ParamBlock& block(int layer, Block which) const;
  std::span<double> operator()(int layer, Block which);
  [[nodiscard]] std::span<const double> operator()(int layer, Block which) const;

  /// Zeroes the last affine map of every dual and primal module.
  void zero_residual_heads();

  bool operator==(const LmpdModel&) const = default;

 private:
  int layers_ = 0;
  Grid grid_;
  std::vector<ParamBlock> blocks_;
  std::vector<double> params_;
};

/// Projection operator as seen by the network: the rows of P in a canonical
/// (content-sorted) order, scaled by 1/|P| so that both the forward and the
/// adjoint map are of unit norm. Row order of the input does not affect any
/// result.
class NetworkOperator {
 public:
  explicit NetworkOperator(const ProjectionMatrix& p);

  [[nodiscard]] const ProjectionMatrix& matrix() const { return p_; }
  [[nodiscard]] double scale() const { return scale_; }
  [[nodiscard]] std::size_t events() const { return p_.rows(); }
  [[nodiscard]] const Grid& grid() const { return p_.grid(); }

  [[nodiscard]] std::vector<double> forward(const Image2D& f) const;
  [[nodiscard]] Image2D adjoint(std::span<const double> h) const;

 private:
  ProjectionMatrix p_;
  double scale_ = 1.0;
};

/// h + FC(h, proj, 1) applied independently to each event.
std::vector<double> dual_forward(const LmpdModel& model, int layer, std::span<const double> h,
                                 std::span<const double> proj);

/// f + CNN([f, bp]).
Image2D primal_forward(const LmpdModel& model, int layer, const Image2D& f, const Image2D& bp);

struct ForwardResult {
  Image2D output;
  /// f_1 .. f_K.
  std::vector<Image2D> layer_outputs;
};

ForwardResult model_forward(const LmpdModel& model, const NetworkOperator& op);
ForwardResult model_forward(const LmpdModel& model, const ProjectionMatrix& p);

struct LossAndGradients {
  double loss = 0.0;
  std::vector<double> gradients;
  Image2D output;
};

/// Mean squared error of f_K against `target` and its gradient with respect
/// to every parameter, by reverse-mode differentiation through the unroll.
LossAndGradients loss_and_gradients(const LmpdModel& model, const NetworkOperator& op, const Image2D& target);
LossAndGradients loss_and_gradients(const LmpdModel& model, const ProjectionMatrix& p, const Image2D& target);

double mse(const Image2D& f, const Image2D& target);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step = 0;
  std::vector<double> m;
  std::vector<double> v;

  void update(std::span<double> params, std::span<const double> grads, double learning_rate);
};

struct TrainConfig {
  double learning_rate = 1e-5;
  int epochs = 500;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainingSample {
  NetworkOperator op;
  Image2D target;
};

struct EpochRecord {
  int epoch = 0;
  double train_mse = 0.0;
  double val_mse = 0.0;
};

struct TrainResult {
  LmpdModel final_model;
  LmpdModel best_model;
  int best_epoch = 0;
  std::vector<EpochRecord> curve;
};

struct TrainHooks {
  /// Called after every epoch (epoch 0 is the untrained evaluation).
  std::function<void(const EpochRecord&)> on_epoch;
  /// Called whenever the best validation MSE improves.
  std::function<void(const LmpdModel&, const EpochRecord&)> on_best;
};

/// One pair per step with Adam updates. Epoch 0 records the untrained model;
/// epoch e >= 1 records the mean pre-update training loss and the validation
/// loss after the epoch. Training order is reshuffled every epoch from
/// `cfg.seed`.
TrainResult train(const LmpdModel& initial, const std::vector<TrainingSample>& train_set,
                  const std::vector<TrainingSample>& val_set, const TrainConfig& cfg, const TrainHooks& hooks = {});

void write_loss_csv(std::ostream& out, const std::vector<EpochRecord>& curve);

/// PSNR of every layer output f_1..f_K against `target`.
std::vector<double> layer_ablation_report(const LmpdModel& model, const NetworkOperator& op, const Image2D& target);
void write_ablation_csv(std::ostream& out, const std::vector<double>& psnr_per_layer);

/// "LMPD", u32 version, u32 K, u32 W, u32 H, f64 pixel size, u32 block
/// count, then per block: u32 name length, name, u64 count, f64 values.
void write_checkpoint(std::ostream& out, const LmpdModel& model);
LmpdModel read_checkpoint(std::istream& in);
void save_checkpoint(const LmpdModel& model, const std::filesystem::path& path);
LmpdModel load_checkpoint(const std::filesystem::path& path);

}  // namespace lmpet::lmpd
