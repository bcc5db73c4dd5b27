#include "gos/nn.hpp"

#include <cmath>

namespace gos::nn {

namespace {

void uniform_init(Tensor& t, SplitMix64& rng, double bound) {
  for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-bound, bound);
}

}  // namespace

Tensor& ParamStore::create(const std::string& name, std::vector<int> shape) {
  auto it = params_.find(name);
  if (it != params_.end()) return it->second;
  auto [ins, ok] = params_.emplace(name, Tensor(std::move(shape)));
  return ins->second;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = params_.find(name);
  GOS_CHECK(it != params_.end(), "ParamStore: unknown parameter " + name);
  return it->second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  GOS_CHECK(it != params_.end(), "ParamStore: unknown parameter " + name);
  return it->second;
}

size_t ParamStore::total_scalars() const {
  size_t n = 0;
  for (const auto& [k, v] : params_) n += v.numel();
  return n;
}

ad::Value Tape::p(const std::string& name) {
  auto it = leaves_.find(name);
  if (it != leaves_.end()) return it->second;
  ad::Value v = ad::leaf(store_->get(name));
  leaves_.emplace(name, v);
  return v;
}

Tensor Tape::grad_of(const std::string& name) const {
  auto it = leaves_.find(name);
  if (it == leaves_.end() || it->second->grad.numel() == 0)
    return Tensor::zeros(store_->get(name).shape());
  return it->second->grad;
}

Linear::Linear(ParamStore& ps, SplitMix64& rng, const std::string& prefix,
               int in_, int out_)
    : w(prefix + ".w"), b(prefix + ".b"), in(in_), out(out_) {
  double bound = 1.0 / std::sqrt(static_cast<double>(in_));
  uniform_init(ps.create(w, {in_, out_}), rng, bound);
  uniform_init(ps.create(b, {out_}), rng, bound);
}

ad::Value Linear::forward(Tape& t, const ad::Value& x) const {
  return ad::add_bias_rows(ad::matmul(x, t.p(w)), t.p(b));
}

ad::Value Linear::forward_vec(Tape& t, const ad::Value& x) const {
  auto row = ad::reshape(x, {1, in});
  return ad::reshape(forward(t, row), {out});
}

Conv2d::Conv2d(ParamStore& ps, SplitMix64& rng, const std::string& prefix,
               int in_, int out_, int k_, int stride_, int pad_)
    : w(prefix + ".w"), b(prefix + ".b"),
      in(in_), out(out_), k(k_), stride(stride_), pad(pad_) {
  double bound = 1.0 / std::sqrt(static_cast<double>(in_) * k_ * k_);
  uniform_init(ps.create(w, {out_, in_, k_, k_}), rng, bound);
  uniform_init(ps.create(b, {out_}), rng, bound);
}

ad::Value Conv2d::forward(Tape& t, const ad::Value& x) const {
  return ad::conv2d(x, t.p(w), t.p(b), stride, pad);
}

ConvTranspose2d::ConvTranspose2d(ParamStore& ps, SplitMix64& rng,
                                 const std::string& prefix, int in_, int out_,
                                 int k_, int stride_, int pad_)
    : w(prefix + ".w"), b(prefix + ".b"),
      in(in_), out(out_), k(k_), stride(stride_), pad(pad_) {
  double bound = 1.0 / std::sqrt(static_cast<double>(in_) * k_ * k_);
  uniform_init(ps.create(w, {in_, out_, k_, k_}), rng, bound);
  uniform_init(ps.create(b, {out_}), rng, bound);
}

ad::Value ConvTranspose2d::forward(Tape& t, const ad::Value& x) const {
  return ad::conv_transpose2d(x, t.p(w), t.p(b), stride, pad);
}

GroupNorm::GroupNorm(ParamStore& ps, const std::string& prefix, int channels_,
                     int groups_)
    : gamma(prefix + ".gamma"), beta(prefix + ".beta"),
      channels(channels_), groups(groups_) {
  Tensor& g = ps.create(gamma, {channels_});
  for (size_t i = 0; i < g.numel(); ++i) g[i] = 1.0;
  ps.create(beta, {channels_});
}

ad::Value GroupNorm::forward(Tape& t, const ad::Value& x) const {
  return ad::group_norm(x, groups, t.p(gamma), t.p(beta));
}

LayerNorm::LayerNorm(ParamStore& ps, const std::string& prefix, int dim_)
    : gamma(prefix + ".gamma"), beta(prefix + ".beta"), dim(dim_) {
  Tensor& g = ps.create(gamma, {dim_});
  for (size_t i = 0; i < g.numel(); ++i) g[i] = 1.0;
  ps.create(beta, {dim_});
}

ad::Value LayerNorm::forward(Tape& t, const ad::Value& x) const {
  return ad::layer_norm(x, t.p(gamma), t.p(beta));
}

MultiheadAttention::MultiheadAttention(ParamStore& ps, SplitMix64& rng,
                                       const std::string& prefix, int d_model_,
                                       int n_heads_)
    : q_proj(ps, rng, prefix + ".q", d_model_, d_model_),
      k_proj(ps, rng, prefix + ".k", d_model_, d_model_),
      v_proj(ps, rng, prefix + ".v", d_model_, d_model_),
      o_proj(ps, rng, prefix + ".o", d_model_, d_model_),
      d_model(d_model_), n_heads(n_heads_) {
  GOS_CHECK(d_model_ % n_heads_ == 0, "attention: d_model % n_heads != 0");
}

ad::Value MultiheadAttention::forward(Tape& t, const ad::Value& query,
                                      const ad::Value& key_value) const {
  auto q = q_proj.forward(t, query);
  auto k = k_proj.forward(t, key_value);
  auto v = v_proj.forward(t, key_value);
  int dh = d_model / n_heads;
  double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  ad::Value ctx;
  for (int h = 0; h < n_heads; ++h) {
    auto qh = ad::slice_cols(q, h * dh, dh);
    auto kh = ad::slice_cols(k, h * dh, dh);
    auto vh = ad::slice_cols(v, h * dh, dh);
    auto scores = ad::mul_scalar(ad::matmul(qh, ad::transpose(kh)), scale);
    auto att = ad::softmax_rows(scores);
    auto head = ad::matmul(att, vh);
    ctx = h == 0 ? head : ad::concat_cols(ctx, head);
  }
  return o_proj.forward(t, ctx);
}

TransformerEncoderLayer::TransformerEncoderLayer(ParamStore& ps,
                                                 SplitMix64& rng,
                                                 const std::string& prefix,
                                                 int d_model, int n_heads)
    : attn(ps, rng, prefix + ".attn", d_model, n_heads),
      ffn1(ps, rng, prefix + ".ffn1", d_model, 4 * d_model),
      ffn2(ps, rng, prefix + ".ffn2", 4 * d_model, d_model),
      norm1(ps, prefix + ".norm1", d_model),
      norm2(ps, prefix + ".norm2", d_model) {}

ad::Value TransformerEncoderLayer::ffn(Tape& t, const ad::Value& x) const {
  return ffn2.forward(t, ad::gelu(ffn1.forward(t, x)));
}

ad::Value TransformerEncoderLayer::forward(Tape& t, const ad::Value& x) const {
  auto y = norm1.forward(t, ad::add(x, attn.forward(t, x, x)));
  return norm2.forward(t, ad::add(y, ffn(t, y)));
}

TransformerDecoderLayer::TransformerDecoderLayer(ParamStore& ps,
                                                 SplitMix64& rng,
                                                 const std::string& prefix,
                                                 int d_model, int n_heads)
    : self_attn(ps, rng, prefix + ".self", d_model, n_heads),
      cross_attn(ps, rng, prefix + ".cross", d_model, n_heads),
      ffn1(ps, rng, prefix + ".ffn1", d_model, 4 * d_model),
      ffn2(ps, rng, prefix + ".ffn2", 4 * d_model, d_model),
      norm1(ps, prefix + ".norm1", d_model),
      norm2(ps, prefix + ".norm2", d_model),
      norm3(ps, prefix + ".norm3", d_model) {}

ad::Value TransformerDecoderLayer::forward(Tape& t, const ad::Value& queries,
                                           const ad::Value& memory) const {
  auto y = norm1.forward(t, ad::add(queries, self_attn.forward(t, queries, queries)));
  y = norm2.forward(t, ad::add(y, cross_attn.forward(t, y, memory)));
  auto f = ffn2.forward(t, ad::gelu(ffn1.forward(t, y)));
  return norm3.forward(t, ad::add(y, f));
}

Mlp3::Mlp3(ParamStore& ps, SplitMix64& rng, const std::string& prefix, int in,
           int hidden, int out)
    : l1(ps, rng, prefix + ".l1", in, hidden),
      l2(ps, rng, prefix + ".l2", hidden, hidden),
      l3(ps, rng, prefix + ".l3", hidden, out) {}

ad::Value Mlp3::forward(Tape& t, const ad::Value& x) const {
  return l3.forward(t, ad::gelu(l2.forward(t, ad::gelu(l1.forward(t, x)))));
}

Tensor sinusoid_encoding(int tokens, int d) {
  Tensor pe({tokens, d});
  for (int pos = 0; pos < tokens; ++pos)
    for (int i = 0; i < d; ++i) {
      double freq = std::pow(10000.0, -2.0 * (i / 2) / d);
      pe.at(pos, i) = (i % 2 == 0) ? std::sin(pos * freq) : std::cos(pos * freq);
    }
  return pe;
}

}  // namespace gos::nn
