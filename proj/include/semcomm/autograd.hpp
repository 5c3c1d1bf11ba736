#pragma once

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "semcomm/label_map.hpp"
#include "semcomm/params.hpp"
#include "semcomm/tensor.hpp"

namespace semcomm {

// Node handle into a Graph tape.
using Var = int;

struct ConvSpec {
    int stride = 1;
    int pad = 0;
    int dilation = 1;
};

enum class PoolKind { Max, Avg };
enum class NormKind { Batch, Instance };
enum class ActKind { Relu, Sigmoid, Tanh, SoftmaxChannel };

// Captured activation pattern: relu masks, pooling/channel-max selections,
// clamp regions and absolute-value signs, in op execution order. Replaying a
// tape pins every piecewise op to the region chosen at capture time, which
// makes the whole network locally linear -- the regime in which central
// finite differences measure exactly what backward() computes.
struct GateTape {
    std::vector<std::shared_ptr<void>> slots;
    std::size_t cursor = 0;
    bool recording = true;
};

// Reverse-mode tape. Nodes are appended in execution order, which is a
// topological order by construction; backward() walks the tape once in
// reverse. In eval mode no backward closures are recorded.
class Graph {
  public:
    explicit Graph(bool training = true) : training_(training) {}

    bool training() const { return training_; }

    // gate capture/replay; the replayed graph must execute the identical op
    // sequence as the recorded one
    std::shared_ptr<GateTape> record_gates() {
        gate_tape_ = std::make_shared<GateTape>();
        return gate_tape_;
    }
    void replay_gates(std::shared_ptr<GateTape> tape) {
        tape->cursor = 0;
        tape->recording = false;
        gate_tape_ = std::move(tape);
    }
    // nullptr when no tape is installed; `replayed` tells the op whether the
    // slot already holds a recorded pattern
    template <typename T>
    T* gate_slot(bool& replayed) {
        replayed = false;
        if (!gate_tape_) return nullptr;
        if (gate_tape_->recording) {
            auto p = std::make_shared<T>();
            gate_tape_->slots.push_back(p);
            return p.get();
        }
        if (gate_tape_->cursor >= gate_tape_->slots.size()) {
            throw ContractError("gate replay: op sequence longer than the recorded tape");
        }
        replayed = true;
        return static_cast<T*>(gate_tape_->slots[gate_tape_->cursor++].get());
    }

    Var input(Tensor value);                              // constant leaf
    Var leaf(Tensor value);                               // standalone grad-capable leaf
    Var param(ParamStore& store, const std::string& name);  // trainable leaf

    const Tensor& value(Var v) const { return nodes_[static_cast<std::size_t>(v)].value; }
    Tensor& grad(Var v);
    float scalar(Var v) const;  // value of a 1-element node

    // Seeds d(loss)/d(loss)=seed and accumulates gradients of every
    // parameter leaf into its ParamStore buffer. Throws ContractError if
    // the loss node is not scalar or the graph was built in eval mode.
    void backward(Var loss, float seed = 1.0f);

    // --- internals used by the op layer ---
    // The closure receives the emitted node's own id, so it can read the
    // upstream gradient with grad(self).
    using BackFn = std::function<void(Graph&, Var self)>;
    Var emit(Tensor value, std::vector<Var> inputs, BackFn back);
    bool wants_grad(Var v) const { return nodes_[static_cast<std::size_t>(v)].requires_grad; }
    std::size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        Tensor value;
        Tensor grad;  // allocated on demand during backward
        std::vector<Var> inputs;
        BackFn back;
        bool requires_grad = false;
        bool grad_ready = false;
        ParamStore* store = nullptr;  // set on parameter leaves
        std::string param_name;
    };

    Tensor& ensure_grad(Var v);

    std::deque<Node> nodes_;
    std::map<std::string, Var> param_cache_;  // one leaf per parameter per graph
    ParamStore* bound_store_ = nullptr;
    std::shared_ptr<GateTape> gate_tape_;
    bool training_;
};

// ---- tensor ops (forward + recorded backward) ----

// output[f,i,j] = bias[f] + sum_{c,u,v} in[c, i*s-p+u*d, j*s-p+v*d] * k[f,c,u,v]
Var conv2d(Graph& g, Var input, Var kernel, Var bias, const ConvSpec& spec);  // bias = -1 for none
Var conv_transpose2d(Graph& g, Var input, Var kernel, int stride, int pad, int out_pad = 0);
Var pool2d(Graph& g, Var input, PoolKind kind, int ksize, int stride, int pad = 0);
Var adaptive_avg_pool2d(Graph& g, Var input, int bins);
Var bilinear_upsample(Graph& g, Var input, int out_h, int out_w);

// Per-channel standardization + affine. Batch kind keeps running statistics
// (updated in training mode, used in eval mode); instance kind always uses
// the statistics of the current input.
Var normalize(Graph& g, Var input, Var gamma, Var beta, NormKind kind, float eps = 1e-5f,
              Tensor* running_mean = nullptr, Tensor* running_var = nullptr,
              float momentum = 0.1f);

Var activate(Graph& g, Var input, ActKind kind);
Var concat_channels(Graph& g, Var a, Var b);
Var slice_channels(Graph& g, Var input, int c0, int c1);  // [c0, c1)

Var add(Graph& g, Var a, Var b);  // same shape
Var sub(Graph& g, Var a, Var b);
// Elementwise product; b may broadcast as [C,1,1] or [1,H,W] against [C,H,W].
Var mul(Graph& g, Var a, Var b);
Var scalar_mul(Graph& g, Var a, float c);
Var scalar_add(Graph& g, Var a, float c);
Var add_const(Graph& g, Var a, Tensor c);  // constant offset, gradient passes through

Var channel_max(Graph& g, Var input);   // [C,H,W] -> [1,H,W]
Var channel_mean(Graph& g, Var input);  // [C,H,W] -> [1,H,W]

Var mean_all(Graph& g, Var input);  // scalar
Var sum_all(Graph& g, Var input);   // scalar
Var inner(Graph& g, Var input, Tensor weights);  // scalar <input, weights>
Var vlog(Graph& g, Var input);
Var clamp(Graph& g, Var input, float lo, float hi);
Var mean_abs_diff(Graph& g, Var a, Var b);  // scalar mean |a-b|

// ---- losses on class maps ----

// Softmax cross-entropy over channels, mean over pixels, natural log.
Var ce_loss(Graph& g, Var logits, const LabelMap& target);
// Soft Dice on probabilities vs one-hot target: 1 - 2*sum(xy)/(sum x + sum y + smooth).
Var dice_loss(Graph& g, Var probs, const LabelMap& target, float smooth = 1e-6f);
// Mean over pixels of -alpha*(1-p_t)^gamma*log(p_t), p_t clamped to [eps,1].
Var focal_loss(Graph& g, Var probs, const LabelMap& target, float alpha = 0.25f,
               float gamma = 2.0f, float eps = 1e-7f);

// ---- non-graph helpers ----

int conv_out_extent(int in, int k, int stride, int pad, int dilation);
LabelMap argmax_labels(const Tensor& logits);  // ties -> lowest class index

}  // namespace semcomm
