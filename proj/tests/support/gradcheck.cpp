#include "support/gradcheck.hpp"

namespace tve::testing {

int run_op_gradient_sweep(uint64_t seed, int instances_per_op, double rel_tol) {
    Rng rng(seed);
    int total = 0;
    using Inputs = std::vector<Tensor>;

    auto sweep = [&](const char* /*name*/, auto make_inputs, auto loss_fn) {
        for (int k = 0; k < instances_per_op; ++k) {
            Inputs in = make_inputs();
            check_gradients(loss_fn, std::move(in), 1e-3, rel_tol);
            ++total;
        }
    };

    sweep(
        "matmul", [&] { return Inputs{random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)}; },
        [](const Inputs& in) { return mean_all(matmul(in[0], in[1])); });

    sweep(
        "add", [&] { return Inputs{random_tensor({3, 5}, rng), random_tensor({3, 5}, rng)}; },
        [](const Inputs& in) { return mean_all(gelu(add(in[0], in[1]))); });

    sweep(
        "add_bias", [&] { return Inputs{random_tensor({4, 3}, rng), random_tensor({3}, rng)}; },
        [](const Inputs& in) { return mean_all(gelu(add(in[0], in[1]))); });

    sweep(
        "sub", [&] { return Inputs{random_tensor({2, 6}, rng), random_tensor({2, 6}, rng)}; },
        [](const Inputs& in) { return mean_all(gelu(sub(in[0], in[1]))); });

    sweep(
        "scale", [&] { return Inputs{random_tensor({7}, rng)}; },
        [](const Inputs& in) { return mean_all(gelu(scale(in[0], -1.7f))); });

    sweep(
        "relu", [&] { return Inputs{random_tensor_away_from({4, 4}, rng, 0.0, 0.05)}; },
        [](const Inputs& in) { return mean_all(relu(in[0])); });

    sweep(
        "gelu", [&] { return Inputs{random_tensor({4, 4}, rng, -2.0, 2.0)}; },
        [](const Inputs& in) { return mean_all(gelu(in[0])); });

    sweep(
        "layer_norm",
        [&] {
            return Inputs{random_tensor({3, 6}, rng), random_tensor({6}, rng, 0.5, 1.5),
                          random_tensor({6}, rng)};
        },
        [](const Inputs& in) {
            static const Tensor target = Tensor::zeros({3, 6});
            return mse(layer_norm(in[0], in[1], in[2]), target);
        });

    sweep(
        "softmax", [&] { return Inputs{random_tensor({3, 5}, rng, -2.0, 2.0)}; },
        [](const Inputs& in) {
            static const Tensor target = Tensor::full({3, 5}, 0.2f);
            return mse(softmax(in[0]), target);
        });

    sweep(
        "log", [&] { return Inputs{random_tensor({4, 3}, rng, 0.2, 2.0)}; },
        [](const Inputs& in) { return mean_all(log(in[0])); });

    sweep(
        "clamp_min", [&] { return Inputs{random_tensor_away_from({5, 3}, rng, 0.25, 0.05)}; },
        [](const Inputs& in) { return mean_all(gelu(clamp_min(in[0], 0.25f))); });

    sweep(
        "mse", [&] { return Inputs{random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)}; },
        [](const Inputs& in) { return mse(in[0], in[1]); });

    sweep(
        "mean_all", [&] { return Inputs{random_tensor({2, 9}, rng)}; },
        [](const Inputs& in) { return mean_all(gelu(in[0])); });

    // Small tensor with O(1) slopes so the summed loss stays quantization-safe.
    sweep(
        "sum_all", [&] { return Inputs{random_tensor({3}, rng, 0.4, 1.2)}; },
        [](const Inputs& in) { return sum_all(gelu(in[0])); });

    sweep(
        "mean_pool_groups", [&] { return Inputs{random_tensor({8, 3}, rng)}; },
        [](const Inputs& in) { return mean_all(gelu(mean_pool_groups(in[0], 4))); });

    sweep(
        "repeat_interleave_rows", [&] { return Inputs{random_tensor({3, 4}, rng)}; },
        [](const Inputs& in) { return mean_all(gelu(repeat_interleave_rows(in[0], 3))); });

    sweep(
        "select_rows", [&] { return Inputs{random_tensor({6, 3}, rng)}; },
        [](const Inputs& in) { return mean_all(gelu(select_rows(in[0], {5, 0, 2, 0}))); });

    sweep(
        "gather_per_row", [&] { return Inputs{random_tensor({4, 5}, rng)}; },
        [](const Inputs& in) { return mean_all(gelu(gather_per_row(in[0], {1, 0, 4, 2}))); });

    sweep(
        "slice_cols", [&] { return Inputs{random_tensor({4, 6}, rng)}; },
        [](const Inputs& in) { return mean_all(gelu(slice_cols(in[0], 1, 4))); });

    sweep(
        "per_position_embed",
        [&] {
            return Inputs{random_tensor({6, 4}, rng), random_tensor({3, 4, 2}, rng),
                          random_tensor({3, 2}, rng)};
        },
        [](const Inputs& in) { return mean_all(gelu(per_position_embed(in[0], in[1], in[2]))); });

    return total;
}

} // namespace tve::testing
