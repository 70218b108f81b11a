#include "msw/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace msw::ad {

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int e : shape) n *= e;
  return n;
}

namespace {

void check_shape(const Shape& shape) {
  for (int e : shape) {
    if (e <= 0) throw std::invalid_argument("tensor extents must be positive");
  }
}

void check_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw std::invalid_argument(std::string(what) + ": non-finite value");
    }
  }
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  check_shape(shape);
  auto node = std::make_shared<detail::TensorNode>();
  node->data.assign(static_cast<size_t>(ad::numel(shape)), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data,
                         bool requires_grad) {
  check_shape(shape);
  if (static_cast<int64_t>(data.size()) != ad::numel(shape)) {
    throw std::invalid_argument("data length does not match extents");
  }
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

detail::TensorNode& Tensor::node() {
  if (!node_) throw std::logic_error("use of an undefined tensor");
  return *node_;
}

const detail::TensorNode& Tensor::node() const {
  if (!node_) throw std::logic_error("use of an undefined tensor");
  return *node_;
}

const Shape& Tensor::shape() const { return node().shape; }

int64_t Tensor::numel() const {
  return static_cast<int64_t>(node().data.size());
}

std::span<double> Tensor::data() { return node().data; }
std::span<const double> Tensor::data() const { return node().data; }

double Tensor::value() const {
  if (numel() != 1) throw std::logic_error("value() needs a one-element tensor");
  return node().data[0];
}

bool Tensor::requires_grad() const { return node().requires_grad; }
void Tensor::set_requires_grad(bool on) { node().requires_grad = on; }

bool Tensor::has_grad() const { return !node().grad.empty(); }

std::span<double> Tensor::grad() {
  auto& n = node();
  if (n.grad.empty()) n.grad.assign(n.data.size(), 0.0);
  return n.grad;
}

std::span<const double> Tensor::grad() const {
  const auto& n = node();
  if (n.grad.empty()) throw std::logic_error("tensor has no gradient");
  return n.grad;
}

void Tensor::zero_grad() {
  auto& n = node();
  n.grad.assign(n.data.size(), 0.0);
}

const std::string& Tensor::name() const { return node().name; }
void Tensor::set_name(std::string name) { node().name = std::move(name); }

// ---------------------------------------------------------------------------
// Graph

Tensor Graph::make_output(Shape shape, bool requires_grad) {
  Tensor out = Tensor::zeros(std::move(shape), false);
  out.node_->requires_grad = requires_grad;
  return out;
}

void Graph::record(std::function<void()> backward_fn) {
  tape_.push_back(std::move(backward_fn));
  backward_done_ = false;
}

std::vector<double>& Graph::ensure_grad(const NodePtr& node) {
  if (node->grad.empty()) node->grad.assign(node->data.size(), 0.0);
  return node->grad;
}

Tensor Graph::binary_elementwise(
    const Tensor& a, const Tensor& b, const char* what,
    const std::function<double(double, double)>& fwd,
    const std::function<void(double, double, double, double&, double&)>& bwd) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch");
  }
  const bool needs = a.requires_grad() || b.requires_grad();
  Tensor out = make_output(a.shape(), needs);
  const auto av = a.data();
  const auto bv = b.data();
  auto ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(av[i], bv[i]);
  if (needs) {
    record([an = a.node_, bn = b.node_, on = out.node_, bwd] {
      if (on->grad.empty()) return;
      const size_t n = on->data.size();
      double* ga = ensure_grad(an).data();
      double* gb = ensure_grad(bn).data();
      for (size_t i = 0; i < n; ++i) {
        bwd(an->data[i], bn->data[i], on->grad[i], ga[i], gb[i]);
      }
    });
  }
  return out;
}

Tensor Graph::unary_elementwise(const Tensor& a,
                                const std::function<double(double)>& fwd,
                                const std::function<double(double, double)>& dfdx) {
  Tensor out = make_output(a.shape(), a.requires_grad());
  const auto av = a.data();
  auto ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(av[i]);
  if (a.requires_grad()) {
    record([an = a.node_, on = out.node_, dfdx] {
      if (on->grad.empty()) return;
      double* ga = ensure_grad(an).data();
      for (size_t i = 0; i < on->data.size(); ++i) {
        ga[i] += on->grad[i] * dfdx(an->data[i], on->data[i]);
      }
    });
  }
  return out;
}

Tensor Graph::add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double g, double& ga, double& gb) {
        ga += g;
        gb += g;
      });
}

Tensor Graph::sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double g, double& ga, double& gb) {
        ga += g;
        gb -= g;
      });
}

Tensor Graph::mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double x, double y, double g, double& ga, double& gb) {
        ga += g * y;
        gb += g * x;
      });
}

Tensor Graph::div(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double x, double y, double g, double& ga, double& gb) {
        ga += g / y;
        gb -= g * x / (y * y);
      });
}

Tensor Graph::neg(const Tensor& a) {
  return unary_elementwise(
      a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor Graph::relu(const Tensor& a) {
  return unary_elementwise(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor Graph::sigmoid(const Tensor& a) {
  return unary_elementwise(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor Graph::log(const Tensor& a) {
  for (double v : a.data()) {
    if (!(v > 0.0)) throw std::domain_error("log: non-positive input");
  }
  return unary_elementwise(
      a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Tensor Graph::exp(const Tensor& a) {
  return unary_elementwise(
      a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Tensor Graph::clamp_min(const Tensor& a, double lo) {
  return unary_elementwise(
      a, [lo](double x) { return x < lo ? lo : x; },
      [lo](double x, double) { return x >= lo ? 1.0 : 0.0; });
}

Tensor Graph::smooth_l1(const Tensor& a) {
  return unary_elementwise(
      a,
      [](double x) {
        const double ax = std::abs(x);
        return ax < 1.0 ? 0.5 * x * x : ax - 0.5;
      },
      [](double x, double) { return std::clamp(x, -1.0, 1.0); });
}

Tensor Graph::affine(const Tensor& a, double scale, double shift) {
  return unary_elementwise(
      a, [scale, shift](double x) { return scale * x + shift; },
      [scale](double, double) { return scale; });
}

Tensor Graph::conv2d(const Tensor& input, const Tensor& weight,
                     const Tensor& bias, int stride, int padding) {
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  if (is.size() != 3 || ws.size() != 4) {
    throw std::invalid_argument("conv2d: input must be CxHxW, weight OxCxKhxKw");
  }
  const int C = is[0], H = is[1], W = is[2];
  const int O = ws[0], KC = ws[1], Kh = ws[2], Kw = ws[3];
  if (KC != C) throw std::invalid_argument("conv2d: channel count mismatch");
  if (Kh % 2 == 0 || Kw % 2 == 0) {
    throw std::invalid_argument("conv2d: kernel extents must be odd");
  }
  if (stride < 1 || padding < 0) {
    throw std::invalid_argument("conv2d: bad stride or padding");
  }
  if (bias.shape() != Shape{O}) {
    throw std::invalid_argument("conv2d: bias must have one entry per output channel");
  }
  const int Ho = (H + 2 * padding - Kh) / stride + 1;
  const int Wo = (W + 2 * padding - Kw) / stride + 1;
  if (Ho <= 0 || Wo <= 0) {
    throw std::invalid_argument("conv2d: non-positive output extents");
  }

  const bool needs =
      input.requires_grad() || weight.requires_grad() || bias.requires_grad();
  Tensor out = make_output({O, Ho, Wo}, needs);

  const double* in = input.data().data();
  const double* w = weight.data().data();
  const double* b = bias.data().data();
  double* o = out.data().data();

  for (int oc = 0; oc < O; ++oc) {
    double* oplane = o + static_cast<int64_t>(oc) * Ho * Wo;
    const double bv = b[oc];
    for (int64_t i = 0; i < static_cast<int64_t>(Ho) * Wo; ++i) oplane[i] = bv;
    for (int ic = 0; ic < C; ++ic) {
      const double* iplane = in + static_cast<int64_t>(ic) * H * W;
      const double* wk = w + ((static_cast<int64_t>(oc) * C + ic) * Kh) * Kw;
      for (int ky = 0; ky < Kh; ++ky) {
        for (int kx = 0; kx < Kw; ++kx) {
          const double wv = wk[ky * Kw + kx];
          for (int oy = 0; oy < Ho; ++oy) {
            const int iy = oy * stride - padding + ky;
            if (iy < 0 || iy >= H) continue;
            // valid ox range so that ix = ox*stride - padding + kx is in bounds
            int ox0 = 0, ox1 = Wo;
            if (stride == 1) {
              ox0 = std::max(0, padding - kx);
              ox1 = std::min(Wo, W + padding - kx);
            }
            const double* irow = iplane + static_cast<int64_t>(iy) * W;
            double* orow = oplane + static_cast<int64_t>(oy) * Wo;
            if (stride == 1) {
              const double* ir = irow - padding + kx;
              for (int ox = ox0; ox < ox1; ++ox) orow[ox] += wv * ir[ox];
            } else {
              for (int ox = 0; ox < Wo; ++ox) {
                const int ix = ox * stride - padding + kx;
                if (ix < 0 || ix >= W) continue;
                orow[ox] += wv * irow[ix];
              }
            }
          }
        }
      }
    }
  }

  if (needs) {
    record([inode = input.node_, wnode = weight.node_, bnode = bias.node_,
            onode = out.node_, C, H, W, O, Kh, Kw, Ho, Wo, stride, padding] {
      if (onode->grad.empty()) return;
      const double* go = onode->grad.data();
      const double* in = inode->data.data();
      const double* w = wnode->data.data();
      double* gi = ensure_grad(inode).data();
      double* gw = ensure_grad(wnode).data();
      double* gb = ensure_grad(bnode).data();
      for (int oc = 0; oc < O; ++oc) {
        const double* gplane = go + static_cast<int64_t>(oc) * Ho * Wo;
        double acc = 0.0;
        for (int64_t i = 0; i < static_cast<int64_t>(Ho) * Wo; ++i) {
          acc += gplane[i];
        }
        gb[oc] += acc;
        for (int ic = 0; ic < C; ++ic) {
          const double* iplane = in + static_cast<int64_t>(ic) * H * W;
          double* giplane = gi + static_cast<int64_t>(ic) * H * W;
          const double* wk = w + ((static_cast<int64_t>(oc) * C + ic) * Kh) * Kw;
          double* gwk = gw + ((static_cast<int64_t>(oc) * C + ic) * Kh) * Kw;
          for (int ky = 0; ky < Kh; ++ky) {
            for (int kx = 0; kx < Kw; ++kx) {
              const double wv = wk[ky * Kw + kx];
              double wacc = 0.0;
              for (int oy = 0; oy < Ho; ++oy) {
                const int iy = oy * stride - padding + ky;
                if (iy < 0 || iy >= H) continue;
                const double* grow = gplane + static_cast<int64_t>(oy) * Wo;
                const double* irow = iplane + static_cast<int64_t>(iy) * W;
                double* girow = giplane + static_cast<int64_t>(iy) * W;
                if (stride == 1) {
                  const int ox0 = std::max(0, padding - kx);
                  const int ox1 = std::min(Wo, W + padding - kx);
                  const int shift = kx - padding;
                  for (int ox = ox0; ox < ox1; ++ox) {
                    wacc += grow[ox] * irow[ox + shift];
                    girow[ox + shift] += grow[ox] * wv;
                  }
                } else {
                  for (int ox = 0; ox < Wo; ++ox) {
                    const int ix = ox * stride - padding + kx;
                    if (ix < 0 || ix >= W) continue;
                    wacc += grow[ox] * irow[ix];
                    girow[ix] += grow[ox] * wv;
                  }
                }
              }
              gwk[ky * Kw + kx] += wacc;
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor Graph::concat_channels(const Tensor& a, const Tensor& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() != 3 || bs.size() != 3 || as[1] != bs[1] || as[2] != bs[2]) {
    throw std::invalid_argument("concat_channels: spatial shape mismatch");
  }
  const bool needs = a.requires_grad() || b.requires_grad();
  Tensor out = make_output({as[0] + bs[0], as[1], as[2]}, needs);
  auto ov = out.data();
  std::copy(a.data().begin(), a.data().end(), ov.begin());
  std::copy(b.data().begin(), b.data().end(),
            ov.begin() + static_cast<int64_t>(a.numel()));
  if (needs) {
    record([an = a.node_, bn = b.node_, on = out.node_] {
      if (on->grad.empty()) return;
      double* ga = ensure_grad(an).data();
      double* gb = ensure_grad(bn).data();
      const size_t na = an->data.size();
      for (size_t i = 0; i < na; ++i) ga[i] += on->grad[i];
      for (size_t i = 0; i < bn->data.size(); ++i) gb[i] += on->grad[na + i];
    });
  }
  return out;
}

Tensor Graph::channel_sum(const Tensor& a, const Tensor& b) {
  return add(a, b);
}

Tensor Graph::channel_max(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "channel_max",
      [](double x, double y) { return x >= y ? x : y; },
      [](double x, double y, double g, double& ga, double& gb) {
        // ties route to the first argument
        if (x >= y) {
          ga += g;
        } else {
          gb += g;
        }
      });
}

Tensor Graph::gather(const Tensor& a, std::vector<int64_t> indices) {
  if (indices.empty()) throw std::invalid_argument("gather: empty index list");
  const int64_t n = a.numel();
  for (int64_t idx : indices) {
    if (idx < 0 || idx >= n) throw std::out_of_range("gather: index out of range");
  }
  Tensor out = make_output({static_cast<int>(indices.size())}, a.requires_grad());
  auto ov = out.data();
  const auto av = a.data();
  for (size_t i = 0; i < indices.size(); ++i) {
    ov[i] = av[static_cast<size_t>(indices[i])];
  }
  if (a.requires_grad()) {
    record([an = a.node_, on = out.node_, idx = std::move(indices)] {
      if (on->grad.empty()) return;
      double* ga = ensure_grad(an).data();
      for (size_t i = 0; i < idx.size(); ++i) {
        ga[static_cast<size_t>(idx[i])] += on->grad[i];
      }
    });
  }
  return out;
}

Tensor Graph::reshape(const Tensor& a, Shape shape) {
  check_shape(shape);
  if (ad::numel(shape) != a.numel()) {
    throw std::invalid_argument("reshape: element count mismatch");
  }
  Tensor out = make_output(std::move(shape), a.requires_grad());
  std::copy(a.data().begin(), a.data().end(), out.data().begin());
  if (a.requires_grad()) {
    record([an = a.node_, on = out.node_] {
      if (on->grad.empty()) return;
      double* ga = ensure_grad(an).data();
      for (size_t i = 0; i < on->data.size(); ++i) ga[i] += on->grad[i];
    });
  }
  return out;
}

Tensor Graph::sum(const Tensor& a) {
  Tensor out = make_output({1}, a.requires_grad());
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  out.data()[0] = acc;
  if (a.requires_grad()) {
    record([an = a.node_, on = out.node_] {
      if (on->grad.empty()) return;
      double* ga = ensure_grad(an).data();
      const double g = on->grad[0];
      for (size_t i = 0; i < an->data.size(); ++i) ga[i] += g;
    });
  }
  return out;
}

Tensor Graph::max_project(const Tensor& a, int axis) {
  const Shape& s = a.shape();
  if (s.size() != 3 || s[0] != 1) {
    throw std::invalid_argument("max_project: expects a 1xHxW map");
  }
  if (axis != 0 && axis != 1) throw std::invalid_argument("max_project: bad axis");
  const int H = s[1], W = s[2];
  const int out_len = axis == 0 ? W : H;
  Tensor out = make_output({out_len}, a.requires_grad());
  std::vector<int64_t> argmax(static_cast<size_t>(out_len), 0);
  const auto av = a.data();
  auto ov = out.data();
  for (int k = 0; k < out_len; ++k) {
    const int inner = axis == 0 ? H : W;
    double best = -std::numeric_limits<double>::infinity();
    int64_t best_idx = -1;
    for (int j = 0; j < inner; ++j) {
      const int64_t idx = axis == 0 ? static_cast<int64_t>(j) * W + k
                                    : static_cast<int64_t>(k) * W + j;
      if (av[idx] > best) {
        best = av[idx];
        best_idx = idx;
      }
    }
    ov[k] = best;
    argmax[k] = best_idx;
  }
  if (a.requires_grad()) {
    record([an = a.node_, on = out.node_, argmax = std::move(argmax)] {
      if (on->grad.empty()) return;
      double* ga = ensure_grad(an).data();
      for (size_t k = 0; k < argmax.size(); ++k) {
        ga[static_cast<size_t>(argmax[k])] += on->grad[k];
      }
    });
  }
  return out;
}

void Graph::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar");
  }
  if (backward_done_) {
    throw std::logic_error("backward called twice without a new forward");
  }
  check_finite(loss.data(), "backward loss");
  const_cast<Tensor&>(loss).grad()[0] += 1.0;
  for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
  backward_done_ = true;
}

void Graph::reset() {
  tape_.clear();
  backward_done_ = false;
}

// ---------------------------------------------------------------------------
// grad_check

double grad_check(
    const std::function<Tensor(Graph&, const std::vector<Tensor>&)>& f,
    std::vector<Tensor> inputs, double eps, int max_coords_per_tensor,
    uint64_t seed) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw std::invalid_argument("grad_check: eps must lie in [1e-7, 1e-3]");
  }
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }

  Graph g;
  Tensor y = f(g, inputs);
  if (y.numel() != 1) {
    throw std::invalid_argument("grad_check: f must be scalar-valued");
  }
  g.backward(y);

  auto eval = [&](const std::vector<Tensor>& xs) {
    Graph fresh;
    Tensor out = f(fresh, xs);
    const double v = out.value();
    if (!std::isfinite(v)) {
      throw std::runtime_error("grad_check: non-finite value at perturbed point");
    }
    return v;
  };

  std::mt19937_64 rng(seed);
  double max_rel = 0.0;
  for (auto& t : inputs) {
    const int64_t n = t.numel();
    std::vector<int64_t> coords;
    if (max_coords_per_tensor > 0 && n > max_coords_per_tensor) {
      coords.reserve(static_cast<size_t>(max_coords_per_tensor));
      for (int k = 0; k < max_coords_per_tensor; ++k) {
        coords.push_back(static_cast<int64_t>(rng() % static_cast<uint64_t>(n)));
      }
    } else {
      coords.resize(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
    }
    auto vals = t.data();
    const auto grads = t.grad();
    for (int64_t c : coords) {
      const double saved = vals[static_cast<size_t>(c)];
      vals[static_cast<size_t>(c)] = saved + eps;
      const double up = eval(inputs);
      vals[static_cast<size_t>(c)] = saved - eps;
      const double down = eval(inputs);
      vals[static_cast<size_t>(c)] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = grads[static_cast<size_t>(c)];
      const double denom = std::abs(analytic) + std::abs(numeric);
      if (denom > 1e-8) {
        max_rel = std::max(max_rel, std::abs(analytic - numeric) / denom);
      }
    }
  }
  return max_rel;
}

}  // namespace msw::ad
