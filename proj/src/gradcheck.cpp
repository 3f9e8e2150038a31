#include "raunet/gradcheck.hpp"

#include <cmath>

#include "raunet/aam.hpp"
#include "raunet/loss.hpp"
#include "raunet/nn_ops.hpp"

namespace raunet {

double fd_max_rel_err(const FdProblem& problem, double step) {
    // analytic gradients
    for (auto& leaf : problem.leaves) {
        leaf->requires_grad = true;
        leaf->grad.clear();
    }
    Tape<double> tape;
    auto loss = problem.build(&tape);
    if (loss->numel() != 1) throw ShapeError("fd_max_rel_err: loss must be scalar");
    tape.backward(loss);
    std::vector<std::vector<double>> analytic;
    for (auto& leaf : problem.leaves) {
        leaf->ensure_grad();
        analytic.push_back(leaf->grad);
    }

    auto eval = [&] {
        auto out = problem.build(nullptr);
        return out->data[0];
    };

    double worst = 0.0;
    for (std::size_t li = 0; li < problem.leaves.size(); ++li) {
        auto& leaf = problem.leaves[li];
        for (std::size_t i = 0; i < leaf->numel(); ++i) {
            const double saved = leaf->data[i];
            leaf->data[i] = saved + step;
            const double up = eval();
            leaf->data[i] = saved - step;
            const double down = eval();
            leaf->data[i] = saved;
            const double fd = (up - down) / (2.0 * step);
            const double a = analytic[li][i];
            const double err = std::abs(a - fd) / std::max(1.0, std::abs(a));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

namespace {

using Td = TensorPtr<double>;

Td random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
    auto t = Tensor<double>::create(std::move(shape), true);
    for (double& v : t->data) v = rng.uniform(lo, hi);
    return t;
}

// fixed random weights turning a tensor output into a scalar probe
Td random_probe(Rng& rng, const Shape& shape) {
    auto r = Tensor<double>::create(shape);
    for (double& v : r->data) v = rng.uniform(-1.0, 1.0);
    return r;
}

std::vector<std::size_t> all_axes(const Shape& shape) {
    std::vector<std::size_t> axes(shape.size());
    for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
    return axes;
}

Td probe_sum(Tape<double>* tape, const Td& out, const Td& probe) {
    return reduce_sum(tape, mul(tape, out, probe), all_axes(out->shape));
}

Shape random_shape(Rng& rng, std::size_t max_rank = 4, std::size_t max_extent = 5) {
    const std::size_t rank = 1 + rng.below(max_rank);
    Shape s(rank);
    for (auto& d : s) d = 1 + rng.below(max_extent);
    return s;
}

// values with guaranteed pairwise gaps, for kink-free maxpool checks
Td distinct_tensor(Rng& rng, Shape shape) {
    auto t = Tensor<double>::create(std::move(shape), true);
    std::vector<std::size_t> ranks(t->numel());
    for (std::size_t i = 0; i < ranks.size(); ++i) ranks[i] = i;
    rng.shuffle(ranks);
    for (std::size_t i = 0; i < t->numel(); ++i) {
        t->data[i] = static_cast<double>(ranks[i]) * 0.013 + rng.uniform(0.0, 0.004);
    }
    return t;
}

// inputs clear of the relu kink: |x| >= 0.05
Td offzero_tensor(Rng& rng, Shape shape) {
    auto t = Tensor<double>::create(std::move(shape), true);
    for (double& v : t->data) {
        const double mag = rng.uniform(0.05, 1.0);
        v = rng.below(2) ? mag : -mag;
    }
    return t;
}

MaskBatch random_targets(Rng& rng, std::size_t n, std::size_t k, std::size_t h, std::size_t w) {
    MaskBatch mb;
    mb.n = n;
    mb.height = h;
    mb.width = w;
    mb.ids.resize(n * h * w);
    for (auto& id : mb.ids) id = static_cast<std::uint8_t>(rng.below(k));
    return mb;
}

struct OpCheck {
    std::string name;
    double tolerance;
    std::function<FdProblem(Rng&)> make;
};

std::vector<OpCheck> op_checks() {
    std::vector<OpCheck> ops;

    ops.push_back({"add", 1e-6, [](Rng& rng) {
        auto shape = random_shape(rng);
        auto a = random_tensor(rng, shape), b = random_tensor(rng, shape);
        auto probe = random_probe(rng, shape);
        return FdProblem{{a, b}, [=](Tape<double>* t) { return probe_sum(t, add(t, a, b), probe); }};
    }});
    ops.push_back({"sub", 1e-6, [](Rng& rng) {
        auto shape = random_shape(rng);
        auto a = random_tensor(rng, shape), b = random_tensor(rng, shape);
        auto probe = random_probe(rng, shape);
        return FdProblem{{a, b}, [=](Tape<double>* t) { return probe_sum(t, sub(t, a, b), probe); }};
    }});
    ops.push_back({"mul", 1e-6, [](Rng& rng) {
        // alternate between same-shape, [C] and [N,C,1,1] broadcasts
        const std::uint64_t mode = rng.below(3);
        Shape ashape = {1 + rng.below(3), 1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(4)};
        Shape bshape = mode == 0 ? ashape
                       : mode == 1 ? Shape{ashape[1]}
                                   : Shape{ashape[0], ashape[1], 1, 1};
        auto a = random_tensor(rng, ashape), b = random_tensor(rng, bshape);
        auto probe = random_probe(rng, ashape);
        return FdProblem{{a, b}, [=](Tape<double>* t) { return probe_sum(t, mul(t, a, b), probe); }};
    }});
    ops.push_back({"scale", 1e-6, [](Rng& rng) {
        auto shape = random_shape(rng);
        auto a = random_tensor(rng, shape);
        const double f = rng.uniform(-2.0, 2.0);
        auto probe = random_probe(rng, shape);
        return FdProblem{{a}, [=](Tape<double>* t) { return probe_sum(t, scale(t, a, f), probe); }};
    }});
    ops.push_back({"log", 1e-6, [](Rng& rng) {
        auto shape = random_shape(rng);
        auto a = random_tensor(rng, shape, 0.2, 2.0);
        auto probe = random_probe(rng, shape);
        return FdProblem{{a}, [=](Tape<double>* t) { return probe_sum(t, log_elem(t, a), probe); }};
    }});
    ops.push_back({"reshape", 1e-6, [](Rng& rng) {
        Shape shape = {2 + rng.below(3), 2, 2};
        auto a = random_tensor(rng, shape);
        Shape flat = {shape[0] * 4};
        auto probe = random_probe(rng, flat);
        return FdProblem{{a}, [=](Tape<double>* t) { return probe_sum(t, reshape(t, a, flat), probe); }};
    }});
    ops.push_back({"reduce_sum", 1e-6, [](Rng& rng) {
        auto shape = random_shape(rng);
        auto a = random_tensor(rng, shape);
        std::vector<std::size_t> axes;
        for (std::size_t ax = 0; ax < shape.size(); ++ax) {
            if (rng.below(2)) axes.push_back(ax);
        }
        if (axes.empty()) axes.push_back(rng.below(shape.size()));
        return FdProblem{{a}, [=](Tape<double>* t) {
            auto r = reduce_sum(t, a, axes);
            return reduce_sum(t, r, all_axes(r->shape));
        }};
    }});
    ops.push_back({"reduce_mean", 1e-6, [](Rng& rng) {
        auto shape = random_shape(rng);
        auto a = random_tensor(rng, shape);
        std::vector<std::size_t> axes = {rng.below(shape.size())};
        return FdProblem{{a}, [=](Tape<double>* t) {
            auto r = reduce_mean(t, a, axes);
            return reduce_sum(t, r, all_axes(r->shape));
        }};
    }});
    ops.push_back({"relu", 1e-6, [](Rng& rng) {
        auto shape = random_shape(rng);
        auto a = offzero_tensor(rng, shape);
        auto probe = random_probe(rng, shape);
        return FdProblem{{a}, [=](Tape<double>* t) { return probe_sum(t, relu(t, a), probe); }};
    }});
    ops.push_back({"softmax_channels", 1e-6, [](Rng& rng) {
        Shape shape = {1 + rng.below(3), 2 + rng.below(4), 1 + rng.below(3), 1 + rng.below(3)};
        auto a = random_tensor(rng, shape, -2.0, 2.0);
        auto probe = random_probe(rng, shape);
        return FdProblem{{a}, [=](Tape<double>* t) {
            return probe_sum(t, softmax_channels(t, a), probe);
        }};
    }});
    ops.push_back({"conv2d", 1e-6, [](Rng& rng) {
        const std::size_t k = 1 + rng.below(3);
        const std::size_t stride = 1 + rng.below(2);
        const std::size_t pad = rng.below(2);
        const std::size_t cin = 1 + rng.below(3), cout = 1 + rng.below(3);
        const std::size_t h = k + stride + rng.below(3), w = k + stride + rng.below(3);
        auto x = random_tensor(rng, {1 + rng.below(2), cin, h, w});
        Conv2dParams<double> p;
        p.weight = random_tensor(rng, {cout, cin, k, k});
        p.bias = random_tensor(rng, {cout});
        p.stride = stride;
        p.padding = pad;
        auto out = conv2d<double>(nullptr, x, p);
        auto probe = random_probe(rng, out->shape);
        return FdProblem{{x, p.weight, p.bias}, [=](Tape<double>* t) {
            return probe_sum(t, conv2d(t, x, p), probe);
        }};
    }});
    ops.push_back({"transposed_conv2d", 1e-6, [](Rng& rng) {
        const std::size_t s = 2 + rng.below(2);
        const std::size_t cin = 1 + rng.below(3), cout = 1 + rng.below(3);
        auto x = random_tensor(rng, {1 + rng.below(2), cin, 1 + rng.below(4), 1 + rng.below(4)});
        Conv2dParams<double> p;
        p.weight = random_tensor(rng, {cout, cin, s, s});
        p.bias = random_tensor(rng, {cout});
        p.stride = s;
        auto out = transposed_conv2d<double>(nullptr, x, p);
        auto probe = random_probe(rng, out->shape);
        return FdProblem{{x, p.weight, p.bias}, [=](Tape<double>* t) {
            return probe_sum(t, transposed_conv2d(t, x, p), probe);
        }};
    }});
    ops.push_back({"batchnorm2d", 1e-4, [](Rng& rng) {
        Shape shape = {2 + rng.below(2), 1 + rng.below(3), 1 + rng.below(4), 1 + rng.below(4)};
        auto x = random_tensor(rng, shape, -2.0, 2.0);
        auto bn = std::make_shared<BatchNorm2dParams<double>>(
            BatchNorm2dParams<double>::make(shape[1]));
        for (double& g : bn->gamma->data) g = rng.uniform(0.5, 1.5);
        for (double& b : bn->beta->data) b = rng.uniform(-0.5, 0.5);
        auto probe = random_probe(rng, shape);
        return FdProblem{{x, bn->gamma, bn->beta}, [=](Tape<double>* t) {
            return probe_sum(t, batchnorm2d(t, x, *bn, Mode::train), probe);
        }};
    }});
    ops.push_back({"maxpool2d", 1e-6, [](Rng& rng) {
        const std::size_t k = 2 + rng.below(2);
        const std::size_t stride = 1 + rng.below(2);
        const std::size_t pad = rng.below(2) && k > 2 ? 1 : 0;
        Shape shape = {1 + rng.below(2), 1 + rng.below(3), k + rng.below(4), k + rng.below(4)};
        auto x = distinct_tensor(rng, shape);
        auto out = maxpool2d<double>(nullptr, x, k, stride, pad);
        auto probe = random_probe(rng, out->shape);
        return FdProblem{{x}, [=](Tape<double>* t) {
            return probe_sum(t, maxpool2d(t, x, k, stride, pad), probe);
        }};
    }});
    ops.push_back({"global_avg_pool", 1e-6, [](Rng& rng) {
        Shape shape = {1 + rng.below(3), 1 + rng.below(4), 1 + rng.below(5), 1 + rng.below(5)};
        auto x = random_tensor(rng, shape);
        auto probe = random_probe(rng, {shape[0], shape[1]});
        return FdProblem{{x}, [=](Tape<double>* t) {
            return probe_sum(t, global_avg_pool(t, x), probe);
        }};
    }});
    ops.push_back({"aam", 1e-5, [](Rng& rng) {
        const std::size_t n = 2 + rng.below(2);
        const std::size_t ch = 1 + rng.below(3), cl = 2 + rng.below(3);
        const std::size_t h = 1 + rng.below(3), w = 1 + rng.below(3);
        auto x_high = random_tensor(rng, {n, cl, h, w});
        auto x_pre = random_tensor(rng, {n, ch, h, w});  // pre-projection decoder map
        auto y_low = random_tensor(rng, {n, cl, h, w});
        auto params = std::make_shared<AamParams<double>>(AamParams<double>::make(ch, cl, cl, rng));
        for (double& b : params->w_alpha.bias->data) b = rng.uniform(-0.3, 0.3);
        for (double& b : params->w_beta.bias->data) b = rng.uniform(-0.3, 0.3);
        for (double& b : params->w_phi.bias->data) b = rng.uniform(-0.3, 0.3);
        auto probe = random_probe(rng, x_high->shape);
        return FdProblem{
            {x_high, x_pre, y_low, params->w_alpha.weight, params->w_alpha.bias,
             params->w_beta.weight, params->w_beta.bias, params->w_phi.weight, params->w_phi.bias,
             params->bn_phi.gamma, params->bn_phi.beta},
            [=](Tape<double>* t) {
                auto attn = aam_vector(t, x_pre, y_low, *params, Mode::train);
                return probe_sum(t, aam_fuse(t, x_high, y_low, attn), probe);
            }};
    }});
    ops.push_back({"cross_entropy", 1e-5, [](Rng& rng) {
        const std::size_t n = 1 + rng.below(2), k = 2 + rng.below(4);
        const std::size_t h = 1 + rng.below(4), w = 1 + rng.below(4);
        auto logits = random_tensor(rng, {n, k, h, w}, -2.0, 2.0);
        auto targets = std::make_shared<MaskBatch>(random_targets(rng, n, k, h, w));
        return FdProblem{{logits}, [=](Tape<double>* t) {
            return cross_entropy(t, logits, *targets);
        }};
    }});
    ops.push_back({"soft_dice", 1e-5, [](Rng& rng) {
        const std::size_t n = 1 + rng.below(2), k = 2 + rng.below(4);
        const std::size_t h = 1 + rng.below(4), w = 1 + rng.below(4);
        auto logits = random_tensor(rng, {n, k, h, w}, -2.0, 2.0);
        auto targets = std::make_shared<MaskBatch>(random_targets(rng, n, k, h, w));
        LossConfig cfg;
        cfg.binary_dice = rng.below(4) == 0;
        return FdProblem{{logits}, [=](Tape<double>* t) {
            return soft_dice(t, softmax_channels(t, logits), *targets, cfg);
        }};
    }});
    ops.push_back({"cel_dice", 1e-5, [](Rng& rng) {
        const std::size_t n = 1 + rng.below(2), k = 2 + rng.below(4);
        const std::size_t h = 1 + rng.below(4), w = 1 + rng.below(4);
        auto logits = random_tensor(rng, {n, k, h, w}, -2.0, 2.0);
        auto targets = std::make_shared<MaskBatch>(random_targets(rng, n, k, h, w));
        LossConfig cfg;
        cfg.alpha = rng.uniform(0.05, 0.95);
        return FdProblem{{logits}, [=](Tape<double>* t) {
            return cel_dice(t, logits, *targets, cfg);
        }};
    }});
    return ops;
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck(std::uint64_t seed, int cases_per_op) {
    std::vector<GradCheckResult> results;
    for (const OpCheck& op : op_checks()) {
        GradCheckResult r;
        r.op = op.name;
        r.tolerance = op.tolerance;
        Rng rng(Rng::mix(seed, Rng::hash_str(op.name)));
        for (int c = 0; c < cases_per_op; ++c) {
            FdProblem problem = op.make(rng);
            r.max_rel_err = std::max(r.max_rel_err, fd_max_rel_err(problem));
            ++r.cases;
        }
        results.push_back(std::move(r));
    }
    return results;
}

}  // namespace raunet
