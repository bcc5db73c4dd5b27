#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "gos/geometry.hpp"
#include "gos/tensor.hpp"

namespace gos::ad {

// Reverse-mode tape node. Graphs are rebuilt per forward pass; backward()
// walks the DAG once in reverse topological order.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad and accumulates into parents' grads.
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.numel() != value.numel()) grad = Tensor::zeros(value.shape());
  }
};

using Value = std::shared_ptr<Node>;

Value constant(Tensor v);
Value leaf(Tensor v);  // trainable leaf (parameter)
Value detach(const Value& x);

// Runs backprop from a scalar root.
void backward(const Value& root);

// ---- elementwise / arithmetic ----
Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value add_scalar(const Value& a, double c);
Value mul_scalar(const Value& a, double c);
Value gelu(const Value& x);
Value sigmoid(const Value& x);
Value clip_min0(const Value& x);
Value clamp01(const Value& x);

// ---- linear algebra ----
Value matmul(const Value& a, const Value& b);          // [m,k]x[k,n]
Value transpose(const Value& a);                       // [m,n]->[n,m]
Value add_bias_rows(const Value& x, const Value& b);   // [T,D]+[D]
Value add_bias_channels(const Value& x, const Value& b);  // [C,H,W]+[C]
Value dot(const Value& a, const Value& b);             // [n]·[n] -> scalar
Value softmax_rows(const Value& x);                    // [T,S]
Value layer_norm(const Value& x, const Value& gamma, const Value& beta,
                 double eps = 1e-6);                   // [T,D]
Value group_norm(const Value& x, int groups, const Value& gamma,
                 const Value& beta, double eps = 1e-6);  // [C,H,W]

// ---- convolutions & spatial ----
Value conv2d(const Value& x, const Value& w, const Value& b, int stride,
             int pad);  // x[C,H,W], w[O,C,kh,kw]
Value conv_transpose2d(const Value& x, const Value& w, const Value& b,
                       int stride, int pad);  // w[C,O,kh,kw]
Value pixel_shuffle(const Value& x, int r);
Value pixel_unshuffle(const Value& x, int r);
Value bilinear_resize(const Value& x, int out_h, int out_w);
Value roi_align(const Value& x, double x1, double y1, double x2, double y2,
                int out_h, int out_w, int samples_per_axis = 2);
Value broadcast_mul_map(const Value& x, const Value& m);  // [C,H,W]*[H,W]
Value gap_chw(const Value& x);                            // [C,H,W]->[C]

// ---- reshaping / assembly ----
Value reshape(const Value& x, std::vector<int> shape);
Value chw_to_tokens(const Value& x);                   // [C,H,W]->[HW,C]
Value tokens_to_chw(const Value& x, int c, int h, int w);
Value concat_cols(const Value& a, const Value& b);
Value slice_cols(const Value& x, int start, int len);
Value concat_channels(const Value& a, const Value& b);
Value gather_rows(const Value& x, const std::vector<int>& idx);

// ---- reductions / losses ----
Value sum_all(const Value& x);
Value mean_all(const Value& x);
// sum_i coeff_i * scalar_i
Value weighted_sum(const std::vector<std::pair<double, Value>>& terms);
Value mse_loss(const Value& pred, const Tensor& target);
Value l1_loss_mean(const Value& pred, const Tensor& target);
Value bce_with_logits_mean(const Value& logits, const Tensor& target);
// mean over rows of -w[t_i]*log softmax(x_i)[t_i], normalized by sum of weights
Value cross_entropy_rows(const Value& logits, const std::vector<int>& targets,
                         const std::vector<double>& class_weights);
Value dice_loss(const Value& logits, const Tensor& target);

// ---- geometry-flavored differentiable ops ----
// Normalizes a 2-vector; zero-norm input maps to (1,0) with *flag set.
Value l2_normalize2(const Value& x, bool* degenerate_flag = nullptr);
// Per-row generalized IoU of predicted boxes against fixed targets.
// pred is [M,4] in (cx,cy,w,h); returns [M]. Corner ties take a subgradient.
Value giou_pairs(const Value& pred_cxcywh, const std::vector<Box>& gt);
// Clipped-cosine cone map on an n x n grid of cell centers in [0,1]^2.
// v must be unit; the cell containing the eye is pinned to 1.
Value gaze_cone_map(const Value& v_unit, double eye_x, double eye_y, int n);

}  // namespace gos::ad
