#pragma once

#include <map>
#include <string>
#include <vector>

#include "gos/autodiff.hpp"
#include "gos/rng.hpp"
#include "gos/tensor.hpp"

namespace gos::nn {

// Owns all trainable tensors by name. Construction order of modules is fixed,
// so initialization from a single seeded RNG is deterministic.
class ParamStore {
 public:
  Tensor& create(const std::string& name, std::vector<int> shape);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const { return params_.count(name) > 0; }
  std::map<std::string, Tensor>& all() { return params_; }
  const std::map<std::string, Tensor>& all() const { return params_; }
  size_t total_scalars() const;

 private:
  std::map<std::string, Tensor> params_;
};

// Per-forward-pass leaf cache. Leaves snapshot parameter values; after
// backward() the accumulated gradients are read back via grad_of().
class Tape {
 public:
  explicit Tape(ParamStore& store) : store_(&store) {}
  ad::Value p(const std::string& name);
  // zero tensor if the parameter did not participate in the graph
  Tensor grad_of(const std::string& name) const;

 private:
  ParamStore* store_;
  std::map<std::string, ad::Value> leaves_;
};

struct Linear {
  std::string w, b;
  int in = 0, out = 0;
  Linear() = default;
  Linear(ParamStore& ps, SplitMix64& rng, const std::string& prefix, int in,
         int out);
  ad::Value forward(Tape& t, const ad::Value& x) const;      // [T,in]->[T,out]
  ad::Value forward_vec(Tape& t, const ad::Value& x) const;  // [in]->[out]
};

struct Conv2d {
  std::string w, b;
  int in = 0, out = 0, k = 0, stride = 1, pad = 0;
  Conv2d() = default;
  Conv2d(ParamStore& ps, SplitMix64& rng, const std::string& prefix, int in,
         int out, int k, int stride, int pad);
  ad::Value forward(Tape& t, const ad::Value& x) const;
};

struct ConvTranspose2d {
  std::string w, b;
  int in = 0, out = 0, k = 0, stride = 1, pad = 0;
  ConvTranspose2d() = default;
  ConvTranspose2d(ParamStore& ps, SplitMix64& rng, const std::string& prefix,
                  int in, int out, int k, int stride, int pad);
  ad::Value forward(Tape& t, const ad::Value& x) const;
};

struct GroupNorm {
  std::string gamma, beta;
  int channels = 0, groups = 8;
  GroupNorm() = default;
  GroupNorm(ParamStore& ps, const std::string& prefix, int channels,
            int groups);
  ad::Value forward(Tape& t, const ad::Value& x) const;
};

struct LayerNorm {
  std::string gamma, beta;
  int dim = 0;
  LayerNorm() = default;
  LayerNorm(ParamStore& ps, const std::string& prefix, int dim);
  ad::Value forward(Tape& t, const ad::Value& x) const;
};

struct MultiheadAttention {
  Linear q_proj, k_proj, v_proj, o_proj;
  int d_model = 0, n_heads = 0;
  MultiheadAttention() = default;
  MultiheadAttention(ParamStore& ps, SplitMix64& rng, const std::string& prefix,
                     int d_model, int n_heads);
  ad::Value forward(Tape& t, const ad::Value& query,
                    const ad::Value& key_value) const;
};

// post-norm residual block: LN(x + attn) then LN(. + FFN), FFN expansion 4x
struct TransformerEncoderLayer {
  MultiheadAttention attn;
  Linear ffn1, ffn2;
  LayerNorm norm1, norm2;
  TransformerEncoderLayer() = default;
  TransformerEncoderLayer(ParamStore& ps, SplitMix64& rng,
                          const std::string& prefix, int d_model, int n_heads);
  ad::Value forward(Tape& t, const ad::Value& x) const;
  ad::Value ffn(Tape& t, const ad::Value& x) const;
};

struct TransformerDecoderLayer {
  MultiheadAttention self_attn, cross_attn;
  Linear ffn1, ffn2;
  LayerNorm norm1, norm2, norm3;
  TransformerDecoderLayer() = default;
  TransformerDecoderLayer(ParamStore& ps, SplitMix64& rng,
                          const std::string& prefix, int d_model, int n_heads);
  ad::Value forward(Tape& t, const ad::Value& queries,
                    const ad::Value& memory) const;
};

struct Mlp3 {
  Linear l1, l2, l3;
  Mlp3() = default;
  Mlp3(ParamStore& ps, SplitMix64& rng, const std::string& prefix, int in,
       int hidden, int out);
  ad::Value forward(Tape& t, const ad::Value& x) const;
};

// fixed 1D sinusoidal encoding over token index, [tokens, d]
Tensor sinusoid_encoding(int tokens, int d);

}  // namespace gos::nn
