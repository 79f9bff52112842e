#include "divseg/loss.hpp"

#include <string>

#include "divseg/error.hpp"

namespace divseg {
namespace {

void check_pair(const ProbMap& pred, const LabelMask& gt, const DiceConfig& cfg) {
    if (pred.height() != gt.height() || pred.width() != gt.width()) {
        throw InvalidInput("prediction " + std::to_string(pred.height()) + "x" + std::to_string(pred.width()) +
                           " does not match ground truth " + std::to_string(gt.height()) + "x" +
                           std::to_string(gt.width()));
    }
    cfg.validate(pred.classes());
}

// d score / d p_i = (2 g_i D - N) / D^2 with N = 2I + eps, D = P + G + eps.
struct ScoreGradient {
    double on_foreground = 0.0;
    double on_background = 0.0;
};

ScoreGradient score_gradient(const DiceTerms& t, double eps) {
    const double num = 2.0 * t.intersection + eps;
    const double den = t.pred_sum + t.gt_sum + eps;
    if (den == 0.0) return {};
    return {(2.0 * den - num) / (den * den), -num / (den * den)};
}

class DiceFunction : public torch::autograd::Function<DiceFunction> {
public:
    static torch::Tensor forward(torch::autograd::AutogradContext* ctx, const torch::Tensor& probs,
                                 const torch::Tensor& labels, int64_t target, double eps) {
        const auto p = probs.select(1, target);
        const auto g = labels.eq(target).to(probs.scalar_type());
        DiceTerms t;
        t.intersection = (p * g).sum().item<double>();
        t.pred_sum = p.sum().item<double>();
        t.gt_sum = g.sum().item<double>();

        ctx->save_for_backward({g});
        ctx->saved_data["target"] = target;
        ctx->saved_data["classes"] = probs.size(1);
        const auto grad = score_gradient(t, eps);
        ctx->saved_data["fg"] = grad.on_foreground;
        ctx->saved_data["bg"] = grad.on_background;
        return torch::full({}, 1.0 - t.score(eps), probs.options());
    }

    static torch::autograd::tensor_list backward(torch::autograd::AutogradContext* ctx,
                                                 torch::autograd::tensor_list grad_out) {
        const auto g = ctx->get_saved_variables()[0];
        const auto target = ctx->saved_data["target"].toInt();
        const auto classes = ctx->saved_data["classes"].toInt();
        const double fg = ctx->saved_data["fg"].toDouble();
        const double bg = ctx->saved_data["bg"].toDouble();

        // Loss = 1 - score, so the channel gradient is the negated score gradient.
        const auto channel = -(g * fg + (1.0 - g) * bg) * grad_out[0];
        auto grad = torch::zeros({g.size(0), classes, g.size(1), g.size(2)}, g.options());
        grad.select(1, target).copy_(channel);
        return {grad, torch::Tensor(), torch::Tensor(), torch::Tensor()};
    }
};

}  // namespace

void DiceConfig::validate(int classes) const {
    if (target_class < 0 || target_class >= classes) {
        throw InvalidInput("Dice target class " + std::to_string(target_class) + " outside {0.." +
                           std::to_string(classes - 1) + "}");
    }
    if (!(smoothing >= 0.0)) throw InvalidInput("Dice smoothing must be >= 0");
}

double DiceTerms::score(double smoothing) const {
    const double den = pred_sum + gt_sum + smoothing;
    if (den == 0.0) return 1.0;
    return (2.0 * intersection + smoothing) / den;
}

DiceTerms dice_terms(const ProbMap& pred, const LabelMask& gt, const DiceConfig& cfg) {
    check_pair(pred, gt, cfg);
    const std::size_t n = pred.pixels();
    const auto p = pred.data().subspan(static_cast<std::size_t>(cfg.target_class) * n, n);
    const auto labels = gt.data();
    DiceTerms t;
    for (std::size_t i = 0; i < n; ++i) {
        const double g = labels[i] == cfg.target_class ? 1.0 : 0.0;
        t.intersection += p[i] * g;
        t.pred_sum += p[i];
        t.gt_sum += g;
    }
    return t;
}

double single_channel_dice_score(const ProbMap& pred, const LabelMask& gt, const DiceConfig& cfg) {
    return dice_terms(pred, gt, cfg).score(cfg.smoothing);
}

double single_channel_dice_loss(const ProbMap& pred, const LabelMask& gt, const DiceConfig& cfg) {
    return 1.0 - single_channel_dice_score(pred, gt, cfg);
}

std::vector<double> single_channel_dice_loss_grad(const ProbMap& pred, const LabelMask& gt,
                                                  const DiceConfig& cfg) {
    const auto terms = dice_terms(pred, gt, cfg);
    const auto sg = score_gradient(terms, cfg.smoothing);
    const std::size_t n = pred.pixels();
    std::vector<double> grad(pred.data().size(), 0.0);
    const auto labels = gt.data();
    for (std::size_t i = 0; i < n; ++i) {
        const bool fg = labels[i] == cfg.target_class;
        grad[static_cast<std::size_t>(cfg.target_class) * n + i] = -(fg ? sg.on_foreground : sg.on_background);
    }
    return grad;
}

torch::Tensor single_channel_dice_loss(const torch::Tensor& probs, const torch::Tensor& labels,
                                       const DiceConfig& cfg) {
    if (probs.dim() != 4 || labels.dim() != 3) {
        throw ShapeError("expected probabilities B×K×H×W and labels B×H×W");
    }
    if (probs.size(0) != labels.size(0) || probs.size(2) != labels.size(1) || probs.size(3) != labels.size(2)) {
        throw ShapeError("probabilities and labels disagree on batch or spatial size");
    }
    cfg.validate(static_cast<int>(probs.size(1)));
    return DiceFunction::apply(probs, labels, static_cast<int64_t>(cfg.target_class), cfg.smoothing);
}

}  // namespace divseg
