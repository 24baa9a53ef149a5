#include "peftlab/losses.hpp"

#include <string>

#include "peftlab/errors.hpp"
#include "peftlab/ops.hpp"

namespace peftlab {

namespace {

void check_targets(const Tensor& logits, const Tensor& targets, const char* op) {
    if (logits.shape() != targets.shape()) {
        throw ShapeError(std::string(op) + ": logits " + shape_str(logits.shape()) +
                         " vs targets " + shape_str(targets.shape()));
    }
    for (const double t : targets.values()) {
        if (t != 0.0 && t != 1.0) {
            throw ValidationError(std::string(op) + ": target value " + std::to_string(t) +
                                  " outside {0, 1}");
        }
    }
}

Tensor complement(const Tensor& targets) {
    std::vector<double> v(targets.values().size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 1.0 - targets.values()[i];
    return Tensor::from_data(targets.shape(), std::move(v));
}

}  // namespace

void LossConfig::validate() const {
    if (lambda < 0.0 || lambda > 1.0) {
        throw ConfigError("lambda must be in [0, 1], got " + std::to_string(lambda));
    }
    if (focal_gamma < 0.0) throw ConfigError("focal gamma must be >= 0");
    if (focal_alpha <= 0.0 || focal_alpha >= 1.0) {
        throw ConfigError("focal alpha must be in (0, 1)");
    }
    if (dice_eps <= 0.0) throw ConfigError("dice eps must be positive");
}

Tensor bce(const Tensor& logits, const Tensor& targets) {
    check_targets(logits, targets, "bce");
    Tensor y = targets.detach();
    // y*softplus(-z) + (1-y)*softplus(z) == -[y log s + (1-y) log(1-s)]
    return mean(add(mul(y, softplus(neg(logits))), mul(complement(y), softplus(logits))));
}

Tensor dice_loss(const Tensor& logits, const Tensor& targets, double eps) {
    check_targets(logits, targets, "dice_loss");
    if (eps <= 0.0) throw ConfigError("dice eps must be positive");
    Tensor s = sigmoid(logits);
    Tensor e = Tensor::scalar(eps);
    Tensor numer = add(scale(sum(mul(s, targets.detach())), 2.0), e);
    Tensor denom = add(add(sum(s), sum(targets.detach())), e);
    return sub(Tensor::scalar(1.0), div(numer, denom));
}

Tensor focal_loss(const Tensor& logits, const Tensor& targets, double gamma, double alpha) {
    check_targets(logits, targets, "focal_loss");
    if (gamma < 0.0) throw ConfigError("focal gamma must be >= 0");
    // Flip the logit sign on background positions so p_t = sigmoid(zt)
    // uniformly; then -log(p_t) = softplus(-zt) and 1 - p_t = sigmoid(-zt).
    const auto& y = targets.values();
    std::vector<double> sign(y.size()), at(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        sign[i] = 2.0 * y[i] - 1.0;
        at[i] = y[i] == 1.0 ? alpha : 1.0 - alpha;
    }
    Tensor zt = mul(logits, Tensor::from_data(logits.shape(), std::move(sign)));
    Tensor weight = Tensor::from_data(logits.shape(), std::move(at));
    Tensor focus = pow_scalar(sigmoid(neg(zt)), gamma);
    return mean(mul(weight, mul(focus, softplus(neg(zt)))));
}

Tensor composite_loss(const Tensor& logits, const Tensor& targets, const LossConfig& cfg) {
    cfg.validate();
    Tensor ce = bce(logits, targets);
    Tensor focal = focal_loss(logits, targets, cfg.focal_gamma, cfg.focal_alpha);
    Tensor dice = dice_loss(logits, targets, cfg.dice_eps);
    return add(add(scale(ce, 1.0 - cfg.lambda), scale(focal, cfg.lambda)), dice);
}

}  // namespace peftlab
