#include <benchmark/benchmark.h>

#include "smetod/rng.hpp"
#include "smetod/soft_moe.hpp"
#include "smetod/tensor.hpp"
#include "smetod/transformer.hpp"

using namespace smetod;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
    Tensor t = Tensor::zeros(std::move(shape));
    CounterRng rng(seed);
    for (auto& v : t.mutable_values()) v = rng.uniform(-1.0, 1.0);
    return t;
}

void BM_Matmul(benchmark::State& state) {
    const auto n = state.range(0);
    const Tensor a = random_tensor({n, n}, 1);
    const Tensor b = random_tensor({n, n}, 2);
    for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
    state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

void BM_Softmax(benchmark::State& state) {
    const Tensor x = random_tensor({64, state.range(0)}, 3);
    for (auto _ : state) benchmark::DoNotOptimize(softmax(x, 1));
}
BENCHMARK(BM_Softmax)->Arg(32)->Arg(256);

void BM_SoftMoEForward(benchmark::State& state) {
    const int experts = static_cast<int>(state.range(0));
    const int total_slots = 32;
    SoftMoEConfig config;
    config.num_experts = experts;
    config.slots_per_expert = total_slots / experts;
    config.d_ff = 128;
    config.d_model = 64;
    SoftMoEParams params = SoftMoEParams::zeros(config);
    CounterRng rng(4);
    for (auto& v : params.phi.mutable_values()) v = rng.uniform(-0.3, 0.3);
    for (auto& w : params.expert_weights)
        for (auto& v : w.mutable_values()) v = rng.uniform(-0.3, 0.3);
    const Tensor x = random_tensor({64, 128}, 5);
    for (auto _ : state) benchmark::DoNotOptimize(soft_moe_forward(x, params));
}
BENCHMARK(BM_SoftMoEForward)->Arg(2)->Arg(8)->Arg(32);

void BM_EncoderForward(benchmark::State& state) {
    ModelConfig c;
    c.vocab_size = 256;
    c.moe_experts = static_cast<int>(state.range(0));
    c.moe_slots_per_expert = 32 / c.moe_experts;
    c.dropout_rate = 0.0;
    const Seq2SeqModel model = Seq2SeqModel::build(c, 6);
    std::vector<int> ids(64);
    CounterRng rng(7);
    for (auto& id : ids) id = 3 + static_cast<int>(rng.next_below(250));
    for (auto _ : state) benchmark::DoNotOptimize(model.encode(ids));
}
BENCHMARK(BM_EncoderForward)->Arg(2)->Arg(32);

} // namespace

BENCHMARK_MAIN();
