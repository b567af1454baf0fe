#include <benchmark/benchmark.h>

#include <random>

#include "vicsim/conv.hpp"
#include "vicsim/eval.hpp"
#include "vicsim/link.hpp"

namespace {

using namespace vicsim;

Tensor<float> rand_tensor(std::vector<int> shape, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    Tensor<float> t(std::move(shape));
    for (float& v : t.data) v = u(rng);
    return t;
}

void BM_Conv2d(benchmark::State& state) {
    const int c = static_cast<int>(state.range(0));
    const Tensor<float> x = rand_tensor({c, 16, 16}, 1);
    const Tensor<float> w = rand_tensor({c, c, 3, 3}, 2);
    const Tensor<float> b = rand_tensor({c}, 3);
    for (auto _ : state) {
        Tape<float> tape;
        Var y = ops::conv2d(tape, tape.push(x), tape.push(w), tape.push(b), 1, 1);
        benchmark::DoNotOptimize(tape.val(y).data.data());
    }
}
BENCHMARK(BM_Conv2d)->Arg(8)->Arg(16)->Arg(32);

void BM_DeformConv2d(benchmark::State& state) {
    const int c = static_cast<int>(state.range(0));
    const Tensor<float> x = rand_tensor({c, 16, 16}, 1);
    const Tensor<float> w = rand_tensor({c, c, 3, 3}, 2);
    Tensor<float> off = rand_tensor({18, 16, 16}, 3);
    for (float& v : off.data) v *= 0.5f;
    for (auto _ : state) {
        Tape<float> tape;
        Var y = ops::deform_conv2d(tape, tape.push(x), tape.push(w), tape.push(off));
        benchmark::DoNotOptimize(tape.val(y).data.data());
    }
}
BENCHMARK(BM_DeformConv2d)->Arg(8)->Arg(16);

void BM_IouBev(benchmark::State& state) {
    eval::Box3D a{0, 0, 0.8, 3.9, 1.6, 1.56, 0.3};
    eval::Box3D b{0.7, 0.4, 0.8, 4.2, 1.7, 1.5, -0.4};
    for (auto _ : state) {
        benchmark::DoNotOptimize(eval::iou_bev(a, b));
        b.yaw += 1e-6; // defeat value caching
    }
}
BENCHMARK(BM_IouBev);

void BM_SerializeRoundTrip(benchmark::State& state) {
    const Tensor<float> t = rand_tensor({16, 16, 16}, 1);
    geo::CameraParams cam;
    cam.K << 48, 0, 32, 0, 48, 32, 0, 0, 1;
    for (auto _ : state) {
        link::Packet p = link::serialize(t, cam, 1, 1, link::WireDtype::F16);
        link::DecodedPacket d = link::deserialize(p);
        benchmark::DoNotOptimize(d.tensor.data.data());
    }
}
BENCHMARK(BM_SerializeRoundTrip);

} // namespace

BENCHMARK_MAIN();
