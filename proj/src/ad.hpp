#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"

namespace gradal::ad {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

struct TensorImpl {
    Shape shape;
    std::vector<double> val;
    std::vector<double> grad;  // empty until touched by backward
    bool requires_grad = false;
    const Tape* producer = nullptr;  // tape that recorded the op producing this tensor
};

// Value-semantics handle over shared dense storage. Copying a Tensor aliases
// the underlying buffer; use clone() for a deep copy.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double fill, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double v);

    bool defined() const { return static_cast<bool>(p_); }
    const Shape& shape() const { return p_->shape; }
    int64_t numel() const { return static_cast<int64_t>(p_->val.size()); }
    int dim(int i) const { return p_->shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(p_->shape.size()); }

    std::span<double> values() { return p_->val; }
    std::span<const double> values() const { return p_->val; }
    double item() const;

    bool requires_grad() const { return p_->requires_grad; }
    void set_requires_grad(bool rg) { p_->requires_grad = rg; }

    bool has_grad() const { return !p_->grad.empty(); }
    std::span<double> grad();
    std::span<const double> grad() const;
    void ensure_grad();  // allocates zero grad if absent
    void zero_grad();
    void drop_grad() { p_->grad.clear(); }

    Tensor clone() const;

    TensorImpl* impl() const { return p_.get(); }

  private:
    std::shared_ptr<TensorImpl> p_;
};

// Ordered record of the primitive operations of one forward pass. backward()
// replays the record in exact reverse order. Single-threaded by contract;
// independent model replicas own independent tapes.
class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(std::function<void()> backward_fn) { nodes_.push_back(std::move(backward_fn)); }
    size_t size() const { return nodes_.size(); }

    // Seeds d(out)/d(out)=1 and accumulates gradients into every tensor
    // recorded on this tape. Errors on non-scalar outputs, on outputs not
    // produced by this tape, and on a second call without reset().
    void backward(const Tensor& out);

    void reset() {
        nodes_.clear();
        consumed_ = false;
    }
    bool consumed() const { return consumed_; }

  private:
    std::vector<std::function<void()>> nodes_;
    bool consumed_ = false;
};

// RAII binding of the thread-local active tape. Ops record themselves only
// while a tape is active and some input requires a gradient.
class TapeScope {
  public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

  private:
    Tape* prev_;
};

Tape* active_tape();

// ---- primitives -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);           // same shape
Tensor add_rowvec(const Tensor& a, const Tensor& row);  // (B,N) + (N)
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor matmul(const Tensor& a, const Tensor& b);  // (m,k) x (k,n)
Tensor relu(const Tensor& a);
Tensor log_op(const Tensor& a);
Tensor exp_op(const Tensor& a);
Tensor sum(const Tensor& a);   // -> scalar
Tensor mean(const Tensor& a);  // -> scalar
Tensor softmax_rows(const Tensor& a);      // (B,N), row-max subtracted
Tensor log_softmax_rows(const Tensor& a);  // (B,N)
Tensor pick_rows(const Tensor& a, std::span<const int> cols);  // (B,N) -> (B)
Tensor reshape(const Tensor& a, Shape shape);  // copies
Tensor detach(const Tensor& a);                // value copy, no gradient flow
// x:(B,C,H,W) w:(F,C,kh,kw) b:(F), stride 1, valid padding
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor maxpool2(const Tensor& x);  // 2x2 window, stride 2

// L2 norm of the concatenated gradients of params (all of which must have
// grads populated by a prior backward pass).
double grad_norm(std::span<const Tensor> params);

// Max relative error between `ad_grad` and central finite differences of
// `eval` at theta over `coords` (all coordinates when empty). Coordinates
// where both sides are below 1e-10 in magnitude count as zero error.
double finite_difference_max_rel_error(
    const std::function<double(std::span<const double>)>& eval,
    std::span<const double> theta, std::span<const double> ad_grad, double h,
    std::span<const size_t> coords);

}  // namespace gradal::ad
