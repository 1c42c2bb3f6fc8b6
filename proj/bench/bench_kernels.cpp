// Timing comparison between the OpenMP kernels and the serial reference, plus
// the purged-vs-full forward pass. Prints one line per case.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#include "purgegate/kernels.hpp"
#include "purgegate/model.hpp"
#include "purgegate/rng.hpp"
#include "purgegate/tokenizer.hpp"
#include "purgegate/dataset.hpp"
#include "purgegate/purge.hpp"

using namespace pg;

namespace {

double time_ms(int reps, const std::function<void()>& fn) {
    fn(); // warm-up
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto t1 = std::chrono::steady_clock::now();
        best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    return best;
}

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
    Matrix m(r, c);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
}

} // namespace

int main() {
    const int threads = configure_threads();
    std::printf("threads: %d\n", threads);

    Rng rng(42);
    for (const std::size_t n : {64, 256, 512}) {
        const Matrix a = random_matrix(n, n, rng);
        const Matrix b = random_matrix(n, n, rng);
        Matrix c;
        const double t_omp = time_ms(5, [&] { matmul(a, b, c); });
        const double t_ser = time_ms(5, [&] { ref::matmul(a, b, c); });
        std::printf("matmul %4zux%-4zu  omp %8.3f ms   serial %8.3f ms   speedup %.2fx\n", n, n,
                    t_omp, t_ser, t_ser / t_omp);
    }

    // purged vs full forward
    ModelConfig cfg;
    const ModelWeights w = init_weights(cfg, 7);
    std::vector<TokenizedSample> batch;
    for (int i = 0; i < 32; ++i)
        batch.push_back(tokenize(sample_shape(i % 4, 512, 1000 + i), cfg.token_count, cfg.k));
    const std::vector<Matrix> embedded = embed_tokens_batch(batch, w, BnMode::frozen);

    for (const std::size_t purge : {0, 8, 16, 24}) {
        const double t = time_ms(5, [&] {
            for (const Matrix& tokens : embedded) {
                if (purge == 0) {
                    transformer_forward(tokens, w, nullptr);
                } else {
                    std::vector<std::size_t> keep;
                    for (std::size_t i = purge; i < cfg.token_count; ++i) keep.push_back(i);
                    transformer_forward(tokens, w, &keep);
                }
            }
        });
        std::printf("forward L_pg=%-3zu  batch of %zu  %8.3f ms\n", purge, batch.size(), t);
    }
    return 0;
}
