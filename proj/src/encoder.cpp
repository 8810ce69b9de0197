#include "emc2/encoder.hpp"

#include <cmath>
#include <cstring>

#include "emc2/errors.hpp"
#include "emc2/rng.hpp"

namespace emc2 {

namespace {

constexpr double kNormFloor = 1e-12;

void check_finite(const std::vector<double>& v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string(what) + ": non-finite value");
  }
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Offsets of the mlp2 sub-arrays inside one side block.
struct Mlp2Layout {
  std::size_t w1, b1, w2, b2;
};

Mlp2Layout mlp2_layout(const EncoderSpec& spec) {
  const std::size_t in = static_cast<std::size_t>(spec.input_dim);
  const std::size_t hid = static_cast<std::size_t>(spec.hidden_dim);
  Mlp2Layout l{};
  l.w1 = 0;
  l.b1 = l.w1 + hid * in;
  l.w2 = l.b1 + hid;
  l.b2 = l.w2 + static_cast<std::size_t>(spec.feature_dim) * hid;
  return l;
}

}  // namespace

void EncoderSpec::validate() const {
  if (feature_dim <= 0) throw ConfigError("encoder: feature_dim must be positive");
  if (norm_bound <= 0.0) throw ConfigError("encoder: norm_bound must be positive");
  switch (kind) {
    case EncoderKind::EmbeddingTable:
      if (item_count <= 0) throw ConfigError("embedding-table encoder needs item_count");
      break;
    case EncoderKind::Linear:
      if (input_dim <= 0) throw ConfigError("linear encoder needs input_dim");
      break;
    case EncoderKind::Mlp2:
      if (input_dim <= 0 || hidden_dim <= 0) {
        throw ConfigError("mlp2 encoder needs input_dim and hidden_dim");
      }
      break;
  }
}

std::size_t EncoderSpec::side_param_count() const {
  const std::size_t d = static_cast<std::size_t>(feature_dim);
  switch (kind) {
    case EncoderKind::EmbeddingTable:
      return static_cast<std::size_t>(item_count) * d;
    case EncoderKind::Linear:
      return d * static_cast<std::size_t>(input_dim);
    case EncoderKind::Mlp2: {
      const std::size_t in = static_cast<std::size_t>(input_dim);
      const std::size_t hid = static_cast<std::size_t>(hidden_dim);
      return hid * in + hid + d * hid + d;
    }
  }
  return 0;
}

std::string EncoderSpec::block_name(Side side) const {
  if (modality == Modality::Unimodal) return "enc";
  return side == Side::Phi ? "phi" : "psi";
}

std::vector<ParamBlock> param_layout(const EncoderSpec& spec) {
  spec.validate();
  const std::size_t n = spec.side_param_count();
  if (spec.modality == Modality::Unimodal) {
    return {{"enc", 0, n}};
  }
  return {{"phi", 0, n}, {"psi", n, n}};
}

ParamVector init_params(const EncoderSpec& spec, std::uint64_t seed) {
  auto layout = param_layout(spec);
  std::size_t total = 0;
  for (const auto& b : layout) total += b.length;
  ParamVector params(std::vector<double>(total, 0.0), layout);

  const std::size_t d = static_cast<std::size_t>(spec.feature_dim);
  int side_idx = 0;
  for (const auto& b : layout) {
    RandomStream rng(seed, Lane::ParamInit, static_cast<std::uint64_t>(side_idx++), 0);
    auto blk = params.block(b.name);
    switch (spec.kind) {
      case EncoderKind::EmbeddingTable: {
        for (int row = 0; row < spec.item_count; ++row) {
          double nrm2 = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double g = rng.next_normal();
            blk[row * d + j] = g;
            nrm2 += g * g;
          }
          const double inv = 1.0 / std::max(std::sqrt(nrm2), kNormFloor);
          for (std::size_t j = 0; j < d; ++j) blk[row * d + j] *= inv;
        }
        break;
      }
      case EncoderKind::Linear: {
        const double scale = 1.0 / std::sqrt(static_cast<double>(spec.input_dim));
        for (auto& w : blk) w = scale * rng.next_normal();
        break;
      }
      case EncoderKind::Mlp2: {
        const auto l = mlp2_layout(spec);
        const std::size_t in = static_cast<std::size_t>(spec.input_dim);
        const std::size_t hid = static_cast<std::size_t>(spec.hidden_dim);
        const double s1 = 1.0 / std::sqrt(static_cast<double>(in));
        const double s2 = 1.0 / std::sqrt(static_cast<double>(hid));
        for (std::size_t i = 0; i < hid * in; ++i) blk[l.w1 + i] = s1 * rng.next_normal();
        for (std::size_t i = 0; i < hid; ++i) blk[l.b1 + i] = 0.1 * rng.next_normal();
        for (std::size_t i = 0; i < d * hid; ++i) blk[l.w2 + i] = s2 * rng.next_normal();
        for (std::size_t i = 0; i < d; ++i) blk[l.b2 + i] = 0.1 * rng.next_normal();
        break;
      }
    }
  }
  return params;
}

Encoded encode_full(const Item& item, const ParamVector& params, Side side,
                    const EncoderSpec& spec) {
  spec.validate();
  const std::size_t d = static_cast<std::size_t>(spec.feature_dim);
  auto blk = params.block(spec.block_name(side));
  if (blk.size() != spec.side_param_count()) {
    throw ConfigError("param block size does not match encoder spec");
  }

  Encoded out;
  out.raw.assign(d, 0.0);

  switch (spec.kind) {
    case EncoderKind::EmbeddingTable: {
      if (item.id < 0 || item.id >= spec.item_count) {
        throw ConfigError("embedding-table: item id " + std::to_string(item.id) +
                          " outside table of " + std::to_string(spec.item_count));
      }
      const std::size_t off = static_cast<std::size_t>(item.id) * d;
      for (std::size_t j = 0; j < d; ++j) out.raw[j] = blk[off + j];
      break;
    }
    case EncoderKind::Linear: {
      if (item.features.size() != static_cast<std::size_t>(spec.input_dim)) {
        throw ConfigError("linear encoder: payload dimension mismatch");
      }
      for (std::size_t i = 0; i < d; ++i) {
        const double* w = blk.data() + i * static_cast<std::size_t>(spec.input_dim);
        double s = 0.0;
        for (int j = 0; j < spec.input_dim; ++j) s += w[j] * item.features[j];
        out.raw[i] = s;
      }
      break;
    }
    case EncoderKind::Mlp2: {
      if (item.features.size() != static_cast<std::size_t>(spec.input_dim)) {
        throw ConfigError("mlp2 encoder: payload dimension mismatch");
      }
      const auto l = mlp2_layout(spec);
      const std::size_t in = static_cast<std::size_t>(spec.input_dim);
      const std::size_t hid = static_cast<std::size_t>(spec.hidden_dim);
      out.hidden.assign(hid, 0.0);
      for (std::size_t i = 0; i < hid; ++i) {
        const double* w = blk.data() + l.w1 + i * in;
        double s = blk[l.b1 + i];
        for (std::size_t j = 0; j < in; ++j) s += w[j] * item.features[j];
        out.hidden[i] = std::tanh(s);
      }
      for (std::size_t i = 0; i < d; ++i) {
        const double* w = blk.data() + l.w2 + i * hid;
        double s = blk[l.b2 + i];
        for (std::size_t j = 0; j < hid; ++j) s += w[j] * out.hidden[j];
        out.raw[i] = s;
      }
      break;
    }
  }

  check_finite(out.raw, "encode");
  out.raw_norm = std::sqrt(dot(out.raw, out.raw));
  if (spec.normalize) {
    const double denom = std::max(out.raw_norm, kNormFloor);
    out.feature.resize(d);
    for (std::size_t j = 0; j < d; ++j) out.feature[j] = out.raw[j] / denom;
  } else {
    out.feature = out.raw;
  }
  return out;
}

std::vector<double> encode(const Item& item, const ParamVector& params, Side side,
                           const EncoderSpec& spec) {
  return encode_full(item, params, side, spec).feature;
}

double similarity(const Item& x, const Item& y, const ParamVector& params,
                  const EncoderSpec& spec) {
  const auto fx = encode_full(x, params, Side::Phi, spec);
  const auto fy = encode_full(y, params, Side::Psi, spec);
  const double s = dot(fx.feature, fy.feature);
  if (!std::isfinite(s)) throw NumericError("similarity: non-finite value");
  return s;
}

void accumulate_feature_grad(const Item& item, const ParamVector& params,
                             Side side, const EncoderSpec& spec,
                             const Encoded& enc, const std::vector<double>& down,
                             ParamVector& grad) {
  const std::size_t d = static_cast<std::size_t>(spec.feature_dim);
  auto gblk = grad.block(spec.block_name(side));
  auto pblk = params.block(spec.block_name(side));

  // Gradient w.r.t. the pre-normalization output. The denominator is the
  // floored max(||v||, eps), treated as constant below the floor.
  std::vector<double> graw(d);
  if (spec.normalize) {
    const double denom = std::max(enc.raw_norm, kNormFloor);
    if (enc.raw_norm > kNormFloor) {
      const double fdotw = dot(enc.feature, down);
      for (std::size_t j = 0; j < d; ++j) {
        graw[j] = (down[j] - enc.feature[j] * fdotw) / denom;
      }
    } else {
      for (std::size_t j = 0; j < d; ++j) graw[j] = down[j] / denom;
    }
  } else {
    graw = down;
  }

  switch (spec.kind) {
    case EncoderKind::EmbeddingTable: {
      const std::size_t off = static_cast<std::size_t>(item.id) * d;
      for (std::size_t j = 0; j < d; ++j) gblk[off + j] += graw[j];
      break;
    }
    case EncoderKind::Linear: {
      const std::size_t in = static_cast<std::size_t>(spec.input_dim);
      for (std::size_t i = 0; i < d; ++i) {
        double* g = gblk.data() + i * in;
        for (std::size_t j = 0; j < in; ++j) g[j] += graw[i] * item.features[j];
      }
      break;
    }
    case EncoderKind::Mlp2: {
      const auto l = mlp2_layout(spec);
      const std::size_t in = static_cast<std::size_t>(spec.input_dim);
      const std::size_t hid = static_cast<std::size_t>(spec.hidden_dim);
      // output layer
      for (std::size_t i = 0; i < d; ++i) {
        double* g = gblk.data() + l.w2 + i * hid;
        for (std::size_t j = 0; j < hid; ++j) g[j] += graw[i] * enc.hidden[j];
        gblk[l.b2 + i] += graw[i];
      }
      // back through tanh
      std::vector<double> gpre(hid, 0.0);
      for (std::size_t j = 0; j < hid; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
          s += pblk[l.w2 + i * hid + j] * graw[i];
        }
        gpre[j] = s * (1.0 - enc.hidden[j] * enc.hidden[j]);
      }
      for (std::size_t i = 0; i < hid; ++i) {
        double* g = gblk.data() + l.w1 + i * in;
        for (std::size_t j = 0; j < in; ++j) g[j] += gpre[i] * item.features[j];
        gblk[l.b1 + i] += gpre[i];
      }
      break;
    }
  }
}

ParamVector grad_similarity(const Item& x, const Item& y, const ParamVector& params,
                            const EncoderSpec& spec) {
  const auto fx = encode_full(x, params, Side::Phi, spec);
  const auto fy = encode_full(y, params, Side::Psi, spec);
  ParamVector grad = params.zeros_like();
  accumulate_feature_grad(x, params, Side::Phi, spec, fx, fy.feature, grad);
  accumulate_feature_grad(y, params, Side::Psi, spec, fy, fx.feature, grad);
  return grad;
}

ParamVector fd_grad_similarity(const Item& x, const Item& y, const ParamVector& params,
                               const EncoderSpec& spec, double h) {
  if (!(h > 0.0)) throw ConfigError("fd_grad_similarity: h must be positive");
  ParamVector theta = params;
  ParamVector grad = params.zeros_like();
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double saved = theta[i];
    theta[i] = saved + h;
    const double up = similarity(x, y, theta, spec);
    theta[i] = saved - h;
    const double dn = similarity(x, y, theta, spec);
    theta[i] = saved;
    const double slope = (up - dn) / (2.0 * h);
    if (!std::isfinite(slope)) throw NumericError("fd_grad_similarity: non-finite slope");
    grad[i] = slope;
  }
  return grad;
}

}  // namespace emc2
