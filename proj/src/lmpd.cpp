#include "lmpet/lmpd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>

#include "lmpet/io.hpp"
#include "lmpet/metrics.hpp"
#include "lmpet/recon_classic.hpp"

namespace lmpet::lmpd {

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;

constexpr int kTaps = kKernel * kKernel;

struct BlockShape {
  const char* name;
  std::size_t size;
};

constexpr std::array<BlockShape, static_cast<std::size_t>(Block::kCount)> kLayout{{
    {"dual.fc1.weight", kDualHidden * kDualInputs},
    {"dual.fc1.bias", kDualHidden},
    {"dual.prelu1", 1},
    {"dual.fc2.weight", kDualHidden * kDualHidden},
    {"dual.fc2.bias", kDualHidden},
    {"dual.prelu2", 1},
    {"dual.fc3.weight", kDualHidden},
    {"dual.fc3.bias", 1},
    {"primal.conv1.weight", kPrimalChannels * kPrimalInputs * kTaps},
    {"primal.conv1.bias", kPrimalChannels},
    {"primal.prelu1", 1},
    {"primal.conv2.weight", kPrimalChannels * kPrimalChannels * kTaps},
    {"primal.conv2.bias", kPrimalChannels},
    {"primal.prelu2", 1},
    {"primal.conv3.weight", kPrimalChannels * kPrimalChannels * kTaps},
    {"primal.conv3.bias", kPrimalChannels},
    {"primal.prelu3", 1},
    {"primal.conv4.weight", kPrimalChannels * kTaps},
    {"primal.conv4.bias", 1},
}};

constexpr std::size_t kBlocksPerLayer = kLayout.size();

}  // namespace

LmpdModel::LmpdModel(int layers, Grid grid) : layers_(layers), grid_(grid) {
  if (layers < 1) throw std::invalid_argument("an LMPD model needs at least one layer");
  grid.validate();
  std::size_t offset = 0;
  for (int k = 0; k < layers; ++k)
    for (const auto& shape : kLayout) {
      blocks_.push_back({"layer" + std::to_string(k) + "." + shape.name, offset, shape.size});
      offset += shape.size;
    }
  params_.assign(offset, 0.0);
}

LmpdModel LmpdModel::initialized(int layers, Grid grid, std::uint64_t seed) {
  LmpdModel model(layers, grid);
  std::mt19937_64 rng(seed);
  auto fill_uniform = [&](std::span<double> out, double fan_in) {
    const double bound = 1.0 / std::sqrt(fan_in);
    std::uniform_real_distribution<double> uni(-bound, bound);
    for (auto& v : out) v = uni(rng);
  };
  for (int k = 0; k < layers; ++k) {
    fill_uniform(model(k, Block::kDualFc1Weight), kDualInputs);
    fill_uniform(model(k, Block::kDualFc1Bias), kDualInputs);
    fill_uniform(model(k, Block::kDualFc2Weight), kDualHidden);
    fill_uniform(model(k, Block::kDualFc2Bias), kDualHidden);
    fill_uniform(model(k, Block::kDualFc3Weight), kDualHidden);
    fill_uniform(model(k, Block::kDualFc3Bias), kDualHidden);
    fill_uniform(model(k, Block::kConv1Weight), kPrimalInputs * kTaps);
    fill_uniform(model(k, Block::kConv1Bias), kPrimalInputs * kTaps);
    fill_uniform(model(k, Block::kConv2Weight), kPrimalChannels * kTaps);
    fill_uniform(model(k, Block::kConv2Bias), kPrimalChannels * kTaps);
    fill_uniform(model(k, Block::kConv3Weight), kPrimalChannels * kTaps);
    fill_uniform(model(k, Block::kConv3Bias), kPrimalChannels * kTaps);
    for (Block b : {Block::kDualPrelu1, Block::kDualPrelu2, Block::kPrelu1, Block::kPrelu2, Block::kPrelu3})
      model(k, b)[0] = kPreluInit;
  }
  return model;
}

const ParamBlock& LmpdModel::block(int layer, Block which) const {
  if (layer < 0 || layer >= layers_) throw std::out_of_range("layer " + std::to_string(layer) + " out of range");
  return blocks_[static_cast<std::size_t>(layer) * kBlocksPerLayer + static_cast<std::size_t>(which)];
}

std::span<double> LmpdModel::operator()(int layer, Block which) {
  const auto& b = block(layer, which);
  return {params_.data() + b.offset, b.size};
}

std::span<const double> LmpdModel::operator()(int layer, Block which) const {
  const auto& b = block(layer, which);
  return {params_.data() + b.offset, b.size};
}

void LmpdModel::zero_residual_heads() {
  for (int k = 0; k < layers_; ++k)
    for (Block b : {Block::kDualFc3Weight, Block::kDualFc3Bias, Block::kConv4Weight, Block::kConv4Bias}) {
      auto s = (*this)(k, b);
      std::fill(s.begin(), s.end(), 0.0);
    }
}

// ---------------------------------------------------------------------------
// Network operator

namespace {

bool row_less(const ProjectionMatrix& p, std::size_t a, std::size_t b) {
  const auto pa = p.row_pixels(a);
  const auto pb = p.row_pixels(b);
  const auto wa = p.row_weights(a);
  const auto wb = p.row_weights(b);
  const std::size_t n = std::min(pa.size(), pb.size());
  for (std::size_t k = 0; k < n; ++k) {
    if (pa[k] != pb[k]) return pa[k] < pb[k];
    if (wa[k] != wb[k]) return wa[k] < wb[k];
  }
  return pa.size() < pb.size();
}

constexpr int kNormIterations = 30;

}  // namespace

NetworkOperator::NetworkOperator(const ProjectionMatrix& p) {
  std::vector<std::size_t> order(p.rows());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return row_less(p, a, b); });
  p_ = p.select_rows(order);
  const double norm = p_.rows() > 0 ? operator_norm(p_, kNormIterations, 0) : 0.0;
  scale_ = norm > 0.0 ? 1.0 / norm : 1.0;
}

std::vector<double> NetworkOperator::forward(const Image2D& f) const {
  auto h = forward_project(p_, f);
  for (auto& v : h) v *= scale_;
  return h;
}

Image2D NetworkOperator::adjoint(std::span<const double> h) const {
  Image2D f = back_project(p_, h);
  for (auto& v : f.values()) v *= scale_;
  return f;
}

// ---------------------------------------------------------------------------
// Dual module: per-event 3 -> 32 -> 32 -> 1 with PReLU on the hidden layers.

namespace {

struct DualParams {
  const double* w1;
  const double* b1;
  double a1;
  const double* w2;
  const double* b2;
  double a2;
  const double* w3;
  double b3;

  DualParams(const LmpdModel& m, int k)
      : w1(m(k, Block::kDualFc1Weight).data()),
        b1(m(k, Block::kDualFc1Bias).data()),
        a1(m(k, Block::kDualPrelu1)[0]),
        w2(m(k, Block::kDualFc2Weight).data()),
        b2(m(k, Block::kDualFc2Bias).data()),
        a2(m(k, Block::kDualPrelu2)[0]),
        w3(m(k, Block::kDualFc3Weight).data()),
        b3(m(k, Block::kDualFc3Bias)[0]) {}
};

inline double prelu(double z, double a) { return z > 0.0 ? z : a * z; }

struct DualCache {
  // Pre-activations, kDualHidden per event.
  std::vector<double> z1;
  std::vector<double> z2;
};

// Evaluates one event. z1/z2 receive the pre-activations.
inline double dual_event(const DualParams& p, double h, double proj, double* z1, double* z2) {
  const double x[kDualInputs] = {h, proj, 1.0};
  double a1[kDualHidden];
  for (int j = 0; j < kDualHidden; ++j) {
    double acc = p.b1[j];
    for (int c = 0; c < kDualInputs; ++c) acc += p.w1[j * kDualInputs + c] * x[c];
    z1[j] = acc;
    a1[j] = prelu(acc, p.a1);
  }
  double out = p.b3;
  for (int j = 0; j < kDualHidden; ++j) {
    double acc = p.b2[j];
    for (int c = 0; c < kDualHidden; ++c) acc += p.w2[j * kDualHidden + c] * a1[c];
    z2[j] = acc;
    out += p.w3[j] * prelu(acc, p.a2);
  }
  return h + out;
}

std::vector<double> dual_apply(const LmpdModel& model, int k, std::span<const double> h, std::span<const double> proj,
                               DualCache* cache) {
  if (h.size() != proj.size())
    throw std::invalid_argument("dual module: h has " + std::to_string(h.size()) + " events, projection has " +
                                std::to_string(proj.size()));
  const DualParams p(model, k);
  const std::size_t n = h.size();
  std::vector<double> out(n);
  double z1[kDualHidden];
  double z2[kDualHidden];
  if (cache) {
    cache->z1.resize(n * kDualHidden);
    cache->z2.resize(n * kDualHidden);
  }
  for (std::size_t i = 0; i < n; ++i) {
    double* pz1 = cache ? cache->z1.data() + i * kDualHidden : z1;
    double* pz2 = cache ? cache->z2.data() + i * kDualHidden : z2;
    out[i] = dual_event(p, h[i], proj[i], pz1, pz2);
  }
  return out;
}

// Given d(h_next), accumulates parameter gradients and returns d(h) and
// d(proj).
void dual_backward(const LmpdModel& model, int k, std::span<const double> h, std::span<const double> proj,
                   const DualCache& cache, std::span<const double> dout, std::vector<double>& dh,
                   std::vector<double>& dproj, std::span<double> grads) {
  const DualParams p(model, k);
  auto g = [&](Block b) { return grads.data() + model.block(k, b).offset; };
  double* gw1 = g(Block::kDualFc1Weight);
  double* gb1 = g(Block::kDualFc1Bias);
  double* ga1 = g(Block::kDualPrelu1);
  double* gw2 = g(Block::kDualFc2Weight);
  double* gb2 = g(Block::kDualFc2Bias);
  double* ga2 = g(Block::kDualPrelu2);
  double* gw3 = g(Block::kDualFc3Weight);
  double* gb3 = g(Block::kDualFc3Bias);

  const std::size_t n = h.size();
  dh.assign(n, 0.0);
  dproj.assign(n, 0.0);
  double a1[kDualHidden];
  double dz1[kDualHidden];
  double dz2[kDualHidden];
  for (std::size_t i = 0; i < n; ++i) {
    const double d = dout[i];
    const double* z1 = cache.z1.data() + i * kDualHidden;
    const double* z2 = cache.z2.data() + i * kDualHidden;
    const double x[kDualInputs] = {h[i], proj[i], 1.0};
    for (int j = 0; j < kDualHidden; ++j) a1[j] = prelu(z1[j], p.a1);

    *gb3 += d;
    for (int j = 0; j < kDualHidden; ++j) {
      gw3[j] += d * prelu(z2[j], p.a2);
      const double da2 = d * p.w3[j];
      if (z2[j] > 0.0) {
        dz2[j] = da2;
      } else {
        dz2[j] = da2 * p.a2;
        *ga2 += da2 * z2[j];
      }
    }
    for (int c = 0; c < kDualHidden; ++c) dz1[c] = 0.0;
    for (int j = 0; j < kDualHidden; ++j) {
      gb2[j] += dz2[j];
      for (int c = 0; c < kDualHidden; ++c) {
        gw2[j * kDualHidden + c] += dz2[j] * a1[c];
        dz1[c] += p.w2[j * kDualHidden + c] * dz2[j];
      }
    }
    double dx[kDualInputs] = {0.0, 0.0, 0.0};
    for (int j = 0; j < kDualHidden; ++j) {
      double dzj = dz1[j];
      if (!(z1[j] > 0.0)) {
        *ga1 += dzj * z1[j];
        dzj *= p.a1;
      }
      gb1[j] += dzj;
      for (int c = 0; c < kDualInputs; ++c) {
        gw1[j * kDualInputs + c] += dzj * x[c];
        dx[c] += p.w1[j * kDualInputs + c] * dzj;
      }
    }
    dh[i] = d + dx[0];
    dproj[i] = dx[1];
  }
}

// ---------------------------------------------------------------------------
// Primal module: 2 -> 64 -> 64 -> 64 -> 1, 3x3 kernels, zero padding.

// Each feature map is a row of a (channels x H*W) row-major matrix.
void im2col(const Mat& in, int height, int width, Mat& cols) {
  const Eigen::Index channels = in.rows();
  const Eigen::Index pixels = static_cast<Eigen::Index>(height) * width;
  cols.resize(channels * kTaps, pixels);
  for (Eigen::Index c = 0; c < channels; ++c) {
    const double* src = in.data() + c * pixels;
    for (int ky = 0; ky < kKernel; ++ky)
      for (int kx = 0; kx < kKernel; ++kx) {
        double* dst = cols.data() + (c * kTaps + ky * kKernel + kx) * pixels;
        for (int y = 0; y < height; ++y) {
          const int sy = y + ky - 1;
          double* row = dst + static_cast<std::ptrdiff_t>(y) * width;
          if (sy < 0 || sy >= height) {
            std::fill(row, row + width, 0.0);
            continue;
          }
          const double* srow = src + static_cast<std::ptrdiff_t>(sy) * width + (kx - 1);
          const int x0 = std::max(0, 1 - kx);
          const int x1 = std::min(width, width + 1 - kx);
          std::fill(row, row + x0, 0.0);
          std::copy(srow + x0, srow + x1, row + x0);
          std::fill(row + x1, row + width, 0.0);
        }
      }
  }
}

void col2im_add(const Mat& cols, int height, int width, Mat& out) {
  const Eigen::Index channels = out.rows();
  const Eigen::Index pixels = static_cast<Eigen::Index>(height) * width;
  for (Eigen::Index c = 0; c < channels; ++c) {
    double* dst = out.data() + c * pixels;
    for (int ky = 0; ky < kKernel; ++ky)
      for (int kx = 0; kx < kKernel; ++kx) {
        const double* src = cols.data() + (c * kTaps + ky * kKernel + kx) * pixels;
        for (int y = 0; y < height; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= height) continue;
          const double* row = src + static_cast<std::ptrdiff_t>(y) * width;
          double* drow = dst + static_cast<std::ptrdiff_t>(sy) * width + (kx - 1);
          const int x0 = std::max(0, 1 - kx);
          const int x1 = std::min(width, width + 1 - kx);
          for (int x = x0; x < x1; ++x) drow[x] += row[x];
        }
      }
  }
}

struct ConvRef {
  const double* weight;
  const double* bias;
  int in_channels;
  int out_channels;
};

ConvRef conv_ref(const LmpdModel& m, int k, Block weight, Block bias, int in_c, int out_c) {
  return {m(k, weight).data(), m(k, bias).data(), in_c, out_c};
}

void conv_forward(const ConvRef& conv, const Mat& in, int height, int width, Mat& cols, Mat& out) {
  im2col(in, height, width, cols);
  const ConstMatMap w(conv.weight, conv.out_channels, conv.in_channels * kTaps);
  const Eigen::Map<const Eigen::VectorXd> b(conv.bias, conv.out_channels);
  out.noalias() = w * cols;
  out.colwise() += b;
}

void conv_backward(const ConvRef& conv, const Mat& in, int height, int width, const Mat& dout, double* grad_w,
                   double* grad_b, Mat* din, Mat& cols) {
  im2col(in, height, width, cols);
  MatMap gw(grad_w, conv.out_channels, conv.in_channels * kTaps);
  Eigen::Map<Eigen::VectorXd> gb(grad_b, conv.out_channels);
  gw.noalias() += dout * cols.transpose();
  gb += dout.rowwise().sum().transpose();
  if (din) {
    const ConstMatMap w(conv.weight, conv.out_channels, conv.in_channels * kTaps);
    thread_local Mat dcols;
    dcols.noalias() = w.transpose() * dout;
    din->setZero(conv.in_channels, static_cast<Eigen::Index>(height) * width);
    col2im_add(dcols, height, width, *din);
  }
}

void prelu_inplace(const Mat& z, double a, Mat& out) { out = z.cwiseMax(0.0) + a * z.cwiseMin(0.0); }

// dz = da * prelu'(z); returns d(slope).
double prelu_backward(const Mat& z, double a, const Mat& da, Mat& dz) {
  const auto positive = (z.array() > 0.0);
  dz = positive.select(da, a * da);
  return positive.select(0.0, da.array() * z.array()).sum();
}

struct PrimalCache {
  Mat in0, z1, a1, z2, a2, z3, a3;
};

Image2D primal_apply(const LmpdModel& model, int k, const Image2D& f, const Image2D& bp, PrimalCache* cache) {
  require_same_grid(f.grid(), bp.grid(), "primal module");
  require_same_grid(f.grid(), model.grid(), "primal module");
  const int h = f.height();
  const int w = f.width();
  const auto pixels = static_cast<Eigen::Index>(f.size());
  // Scratch buffers are reused across calls; reallocating them dominates
  // the cost at small grids.
  thread_local PrimalCache scratch;
  thread_local Mat cols, out;
  PrimalCache& c = cache ? *cache : scratch;
  c.in0.resize(kPrimalInputs, pixels);
  std::copy(f.values().begin(), f.values().end(), c.in0.data());
  std::copy(bp.values().begin(), bp.values().end(), c.in0.data() + pixels);

  conv_forward(conv_ref(model, k, Block::kConv1Weight, Block::kConv1Bias, kPrimalInputs, kPrimalChannels), c.in0, h, w,
               cols, c.z1);
  prelu_inplace(c.z1, model(k, Block::kPrelu1)[0], c.a1);
  conv_forward(conv_ref(model, k, Block::kConv2Weight, Block::kConv2Bias, kPrimalChannels, kPrimalChannels), c.a1, h, w,
               cols, c.z2);
  prelu_inplace(c.z2, model(k, Block::kPrelu2)[0], c.a2);
  conv_forward(conv_ref(model, k, Block::kConv3Weight, Block::kConv3Bias, kPrimalChannels, kPrimalChannels), c.a2, h, w,
               cols, c.z3);
  prelu_inplace(c.z3, model(k, Block::kPrelu3)[0], c.a3);
  conv_forward(conv_ref(model, k, Block::kConv4Weight, Block::kConv4Bias, kPrimalChannels, 1), c.a3, h, w, cols, out);

  Image2D next = f;
  for (Eigen::Index j = 0; j < pixels; ++j) next[static_cast<std::size_t>(j)] += out(0, j);
  return next;
}

// Given d(f_next), accumulates parameter gradients and returns d(f) and d(bp).
void primal_backward(const LmpdModel& model, int k, const PrimalCache& c, const Image2D& dnext, Image2D& df,
                     Image2D& dbp, std::span<double> grads) {
  const Grid& grid = model.grid();
  const int h = grid.height;
  const int w = grid.width;
  const auto pixels = static_cast<Eigen::Index>(grid.size());
  auto g = [&](Block b) { return grads.data() + model.block(k, b).offset; };

  thread_local Mat cols, dout, da, dz, din;
  dout.resize(1, pixels);
  std::copy(dnext.values().begin(), dnext.values().end(), dout.data());

  conv_backward(conv_ref(model, k, Block::kConv4Weight, Block::kConv4Bias, kPrimalChannels, 1), c.a3, h, w, dout,
                g(Block::kConv4Weight), g(Block::kConv4Bias), &da, cols);
  *g(Block::kPrelu3) += prelu_backward(c.z3, model(k, Block::kPrelu3)[0], da, dz);
  conv_backward(conv_ref(model, k, Block::kConv3Weight, Block::kConv3Bias, kPrimalChannels, kPrimalChannels), c.a2, h,
                w, dz, g(Block::kConv3Weight), g(Block::kConv3Bias), &da, cols);
  *g(Block::kPrelu2) += prelu_backward(c.z2, model(k, Block::kPrelu2)[0], da, dz);
  conv_backward(conv_ref(model, k, Block::kConv2Weight, Block::kConv2Bias, kPrimalChannels, kPrimalChannels), c.a1, h,
                w, dz, g(Block::kConv2Weight), g(Block::kConv2Bias), &da, cols);
  *g(Block::kPrelu1) += prelu_backward(c.z1, model(k, Block::kPrelu1)[0], da, dz);
  conv_backward(conv_ref(model, k, Block::kConv1Weight, Block::kConv1Bias, kPrimalInputs, kPrimalChannels), c.in0, h,
                w, dz, g(Block::kConv1Weight), g(Block::kConv1Bias), &din, cols);

  df = dnext;
  dbp = Image2D(grid);
  for (Eigen::Index j = 0; j < pixels; ++j) {
    df[static_cast<std::size_t>(j)] += din(0, j);
    dbp[static_cast<std::size_t>(j)] = din(1, j);
  }
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

struct LayerTrace {
  std::vector<double> h_in;
  std::vector<double> proj;
  DualCache dual;
  std::vector<double> h_out;
  Image2D f_in;
  PrimalCache primal;
};

ForwardResult run_forward(const LmpdModel& model, const NetworkOperator& op, std::vector<LayerTrace>* traces) {
  require_same_grid(model.grid(), op.grid(), "model_forward");
  ForwardResult result;
  Image2D f(model.grid());
  std::vector<double> h(op.events(), 0.0);
  if (traces) traces->resize(static_cast<std::size_t>(model.layers()));
  for (int k = 0; k < model.layers(); ++k) {
    std::vector<double> proj = op.forward(f);
    LayerTrace* t = traces ? &(*traces)[static_cast<std::size_t>(k)] : nullptr;
    std::vector<double> h_next = dual_apply(model, k, h, proj, t ? &t->dual : nullptr);
    const Image2D bp = op.adjoint(h_next);
    Image2D f_next = primal_apply(model, k, f, bp, t ? &t->primal : nullptr);
    if (!all_finite(h_next) || !all_finite(f_next.values()))
      throw std::runtime_error("non-finite values in LMPD layer " + std::to_string(k + 1));
    if (t) {
      t->h_in = std::move(h);
      t->proj = std::move(proj);
      t->h_out = h_next;
      t->f_in = f;
    }
    h = std::move(h_next);
    f = std::move(f_next);
    result.layer_outputs.push_back(f);
  }
  result.output = f;
  return result;
}

}  // namespace

std::vector<double> dual_forward(const LmpdModel& model, int layer, std::span<const double> h,
                                 std::span<const double> proj) {
  return dual_apply(model, layer, h, proj, nullptr);
}

Image2D primal_forward(const LmpdModel& model, int layer, const Image2D& f, const Image2D& bp) {
  return primal_apply(model, layer, f, bp, nullptr);
}

ForwardResult model_forward(const LmpdModel& model, const NetworkOperator& op) { return run_forward(model, op, nullptr); }

ForwardResult model_forward(const LmpdModel& model, const ProjectionMatrix& p) {
  return model_forward(model, NetworkOperator(p));
}

double mse(const Image2D& f, const Image2D& target) {
  require_same_grid(f.grid(), target.grid(), "mse");
  double s = 0.0;
  for (std::size_t j = 0; j < f.size(); ++j) {
    const double d = f[j] - target[j];
    s += d * d;
  }
  return s / static_cast<double>(f.size());
}

LossAndGradients loss_and_gradients(const LmpdModel& model, const NetworkOperator& op, const Image2D& target) {
  require_same_grid(model.grid(), target.grid(), "loss_and_gradients");
  std::vector<LayerTrace> traces;
  ForwardResult fwd = run_forward(model, op, &traces);

  LossAndGradients out;
  out.loss = mse(fwd.output, target);
  out.gradients.assign(model.size(), 0.0);
  const auto scale = 2.0 / static_cast<double>(target.size());
  Image2D df(model.grid());
  for (std::size_t j = 0; j < df.size(); ++j) df[j] = scale * (fwd.output[j] - target[j]);
  std::vector<double> dh(op.events(), 0.0);

  Image2D df_prev, dbp;
  std::vector<double> dh_prev, dproj;
  for (int k = model.layers() - 1; k >= 0; --k) {
    const LayerTrace& t = traces[static_cast<std::size_t>(k)];
    primal_backward(model, k, t.primal, df, df_prev, dbp, out.gradients);
    const auto from_bp = op.forward(dbp);
    for (std::size_t i = 0; i < dh.size(); ++i) dh[i] += from_bp[i];
    dual_backward(model, k, t.h_in, t.proj, t.dual, dh, dh_prev, dproj, out.gradients);
    const Image2D from_proj = op.adjoint(dproj);
    for (std::size_t j = 0; j < df_prev.size(); ++j) df_prev[j] += from_proj[j];
    if (!all_finite(df_prev.values()) || !all_finite(dh_prev))
      throw std::runtime_error("non-finite gradient in LMPD layer " + std::to_string(k + 1));
    df = std::move(df_prev);
    dh = std::move(dh_prev);
  }
  if (!all_finite(out.gradients)) throw std::runtime_error("non-finite parameter gradient");
  out.output = std::move(fwd.output);
  return out;
}

LossAndGradients loss_and_gradients(const LmpdModel& model, const ProjectionMatrix& p, const Image2D& target) {
  return loss_and_gradients(model, NetworkOperator(p), target);
}

// ---------------------------------------------------------------------------
// Training

void AdamState::update(std::span<double> params, std::span<const double> grads, double learning_rate) {
  if (m.size() != params.size()) {
    m.assign(params.size(), 0.0);
    v.assign(params.size(), 0.0);
  }
  ++step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * grads[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * grads[i] * grads[i];
    params[i] -= learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + epsilon);
  }
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("learning rate must be >= 0");
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw std::invalid_argument("Adam moment coefficients must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw std::invalid_argument("Adam epsilon must be > 0");
}

namespace {

double mean_loss(const LmpdModel& model, const std::vector<TrainingSample>& samples) {
  if (samples.empty()) return 0.0;
  double total = 0.0;
  for (const auto& s : samples) total += mse(model_forward(model, s.op).output, s.target);
  return total / static_cast<double>(samples.size());
}

}  // namespace

TrainResult train(const LmpdModel& initial, const std::vector<TrainingSample>& train_set,
                  const std::vector<TrainingSample>& val_set, const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  if (train_set.empty()) throw std::invalid_argument("training split is empty");

  TrainResult result;
  result.final_model = initial;
  LmpdModel& model = result.final_model;
  AdamState adam;
  adam.beta1 = cfg.beta1;
  adam.beta2 = cfg.beta2;
  adam.epsilon = cfg.epsilon;

  const bool has_val = !val_set.empty();
  EpochRecord first{0, mean_loss(model, train_set), 0.0};
  first.val_mse = has_val ? mean_loss(model, val_set) : first.train_mse;
  result.curve.push_back(first);
  result.best_model = model;
  result.best_epoch = 0;
  double best = first.val_mse;
  if (hooks.on_epoch) hooks.on_epoch(first);
  if (hooks.on_best) hooks.on_best(model, first);

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t idx : order) {
      const auto& sample = train_set[idx];
      LossAndGradients lg;
      try {
        lg = loss_and_gradients(model, sample.op, sample.target);
      } catch (const std::exception& e) {
        throw std::runtime_error("epoch " + std::to_string(epoch) + ", training pair " + std::to_string(idx) + ": " +
                                 e.what());
      }
      if (!std::isfinite(lg.loss))
        throw std::runtime_error("epoch " + std::to_string(epoch) + ": non-finite loss on training pair " +
                                 std::to_string(idx));
      total += lg.loss;
      adam.update(model.params(), lg.gradients, cfg.learning_rate);
    }
    EpochRecord rec{epoch, total / static_cast<double>(train_set.size()), 0.0};
    rec.val_mse = has_val ? mean_loss(model, val_set) : rec.train_mse;
    if (!std::isfinite(rec.val_mse)) throw std::runtime_error("epoch " + std::to_string(epoch) + ": non-finite validation loss");
    result.curve.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);
    if (rec.val_mse < best) {
      best = rec.val_mse;
      result.best_model = model;
      result.best_epoch = epoch;
      if (hooks.on_best) hooks.on_best(model, rec);
    }
  }
  return result;
}

void write_loss_csv(std::ostream& out, const std::vector<EpochRecord>& curve) {
  out << "epoch,train_mse,val_mse\n";
  const auto old = out.precision(17);
  for (const auto& r : curve) out << r.epoch << ',' << r.train_mse << ',' << r.val_mse << '\n';
  out.precision(old);
}

std::vector<double> layer_ablation_report(const LmpdModel& model, const NetworkOperator& op, const Image2D& target) {
  const auto fwd = model_forward(model, op);
  std::vector<double> out;
  out.reserve(fwd.layer_outputs.size());
  for (const auto& f : fwd.layer_outputs) out.push_back(psnr(f, target));
  return out;
}

void write_ablation_csv(std::ostream& out, const std::vector<double>& psnr_per_layer) {
  out << "layer,psnr\n";
  const auto old = out.precision(10);
  for (std::size_t k = 0; k < psnr_per_layer.size(); ++k) out << k + 1 << ',' << psnr_per_layer[k] << '\n';
  out.precision(old);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
constexpr std::uint32_t kCheckpointVersion = 1;
}

void write_checkpoint(std::ostream& out, const LmpdModel& model) {
  le::put_magic(out, "LMPD");
  le::put_u32(out, kCheckpointVersion);
  le::put_u32(out, static_cast<std::uint32_t>(model.layers()));
  le::put_u32(out, static_cast<std::uint32_t>(model.grid().width));
  le::put_u32(out, static_cast<std::uint32_t>(model.grid().height));
  le::put_f64(out, model.grid().pixel_size_mm);
  le::put_u32(out, static_cast<std::uint32_t>(model.blocks().size()));
  const auto params = model.params();
  for (const auto& b : model.blocks()) {
    le::put_u32(out, static_cast<std::uint32_t>(b.name.size()));
    out.write(b.name.data(), static_cast<std::streamsize>(b.name.size()));
    le::put_u64(out, b.size);
    for (std::size_t i = 0; i < b.size; ++i) le::put_f64(out, params[b.offset + i]);
  }
}

LmpdModel read_checkpoint(std::istream& in) {
  le::expect_magic(in, "LMPD");
  const auto version = le::get_u32(in);
  if (version != kCheckpointVersion) throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  const auto layers = static_cast<int>(le::get_u32(in));
  Grid grid;
  grid.width = static_cast<int>(le::get_u32(in));
  grid.height = static_cast<int>(le::get_u32(in));
  grid.pixel_size_mm = le::get_f64(in);
  LmpdModel model(layers, grid);
  const auto n_blocks = le::get_u32(in);
  if (n_blocks != model.blocks().size())
    throw std::runtime_error("checkpoint has " + std::to_string(n_blocks) + " blocks, expected " +
                             std::to_string(model.blocks().size()));
  auto params = model.params();
  for (const auto& b : model.blocks()) {
    const auto len = le::get_u32(in);
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (!in || name != b.name) throw std::runtime_error("checkpoint block '" + name + "' where '" + b.name + "' expected");
    const auto count = le::get_u64(in);
    if (count != b.size) throw std::runtime_error("checkpoint block '" + name + "' has wrong size");
    for (std::size_t i = 0; i < b.size; ++i) params[b.offset + i] = le::get_f64(in);
  }
  if (!all_finite(params)) throw std::runtime_error("checkpoint contains non-finite parameters");
  return model;
}

void save_checkpoint(const LmpdModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_checkpoint(out, model);
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

LmpdModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return read_checkpoint(in);
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

}  // namespace lmpet::lmpd
