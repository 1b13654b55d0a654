#include <catch2/catch_amalgamated.hpp>
#include <svho/codebook.hpp>

#include <algorithm>
#include <set>

using namespace svho;
using Catch::Approx;

namespace {

void set_entries(Codebook& book, const std::vector<std::vector<float>>& rows) {
    auto& e = book.raw_entries();
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy(rows[i].begin(), rows[i].end(), e.begin() + i * book.dim());
}

// brute-force reference: scan every entry, keep the first strict minimum
int brute_nearest(const Codebook& book, const float* z) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int i = 0; i < book.size(); ++i) {
        double d = 0.0;
        const float* e = book.entry(i);
        for (int j = 0; j < book.dim(); ++j) {
            double diff = static_cast<double>(z[j]) - e[j];
            d += diff * diff;
        }
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

}  // namespace

TEST_CASE("quantize picks the nearest entry", "[codebook]") {
    Codebook book(4, 2, 42);
    set_entries(book, {{0.0f, 0.0f}, {1.0f, 1.0f}, {-1.0f, 0.5f}, {0.3f, -0.7f}});

    SECTION("latent equal to an entry maps to that entry") {
        std::vector<float> z = {0.3f, -0.7f};
        std::vector<float> e(2);
        REQUIRE(book.quantize(z.data(), e.data()) == 3);
        REQUIRE(e[0] == 0.3f);
        REQUIRE(e[1] == -0.7f);
    }

    SECTION("closer entry wins") {
        std::vector<float> z = {0.4f, 0.4f};
        // d(e0) = 0.32, d(e1) = 0.72
        REQUIRE(book.quantize(z.data()) == 0);
    }

    SECTION("exact ties resolve to the smallest index") {
        set_entries(book, {{1.0f, 0.0f}, {-1.0f, 0.0f}, {1.0f, 0.0f}, {0.0f, 1.0f}});
        std::vector<float> z = {0.0f, 0.0f};
        // all four entries are at distance 1
        REQUIRE(book.quantize(z.data()) == 0);
        // two-way tie between entries 1 and 3
        z = {-0.5f, 0.5f};
        REQUIRE(book.quantize(z.data()) == 1);
    }
}

TEST_CASE("quantize agrees with exhaustive search", "[codebook]") {
    Rng rng(7, 0);
    for (int trial = 0; trial < 50; ++trial) {
        int k = 2 + static_cast<int>(rng.uniform_u32(63));
        int v = 1 + static_cast<int>(rng.uniform_u32(8));
        Codebook book(k, v, 1000 + trial);
        std::vector<float> z(v);
        for (int q = 0; q < 20; ++q) {
            for (auto& x : z) x = static_cast<float>(rng.normal() * 0.2);
            REQUIRE(book.quantize(z.data()) == brute_nearest(book, z.data()));
        }
    }
}

TEST_CASE("quantize_cube maps every cell", "[codebook]") {
    const int v = 4, s = 2;
    Codebook book(8, v, 3);

    SECTION("constant cube of one entry maps all cells to it") {
        std::vector<float> cube(v * s * s * s);
        const float* e7 = book.entry(7);
        const std::size_t cells = s * s * s;
        for (int c = 0; c < v; ++c)
            for (std::size_t i = 0; i < cells; ++i) cube[c * cells + i] = e7[c];
        std::vector<float> quantized(cube.size());
        LatentCube codes = book.quantize_cube(cube, s, &quantized);
        REQUIRE(codes.cell_count() == cells);
        REQUIRE(codes.codebook_size == 8);
        for (auto code : codes.indices) REQUIRE(code == 7);
        for (std::size_t i = 0; i < cube.size(); ++i) REQUIRE(quantized[i] == cube[i]);
    }

    SECTION("random cube matches per-cell brute force") {
        Rng rng(9, 1);
        std::vector<float> cube(v * s * s * s);
        for (auto& x : cube) x = static_cast<float>(rng.normal() * 0.15);
        LatentCube codes = book.quantize_cube(cube, s);
        const std::size_t cells = s * s * s;
        for (std::size_t i = 0; i < cells; ++i) {
            float z[v];
            for (int c = 0; c < v; ++c) z[c] = cube[c * cells + i];
            REQUIRE(codes.indices[i] == brute_nearest(book, z));
        }
    }

    SECTION("a single-entry book maps everything to zero") {
        Codebook tiny(1, v, 4);
        Rng rng(10, 1);
        std::vector<float> cube(v * s * s * s);
        for (auto& x : cube) x = static_cast<float>(rng.normal());
        for (auto code : tiny.quantize_cube(cube, s).indices) REQUIRE(code == 0);
    }
}

TEST_CASE("lookup_cube inverts quantization of distinct entries", "[codebook]") {
    const int v = 3, s = 2;
    Codebook book(16, v, 5);

    SECTION("all-zero codes tile the first entry") {
        LatentCube codes(s, 16);
        auto cube = book.lookup_cube(codes);
        const std::size_t cells = s * s * s;
        for (int c = 0; c < v; ++c)
            for (std::size_t i = 0; i < cells; ++i)
                REQUIRE(cube[c * cells + i] == book.entry(0)[c]);
    }

    SECTION("quantize(lookup(codes)) round-trips when entries are distinct") {
        // default init draws entries independently, so duplicates are
        // vanishingly unlikely; assert distinctness to keep the test honest
        std::set<std::vector<float>> uniq;
        for (int i = 0; i < book.size(); ++i)
            uniq.insert(std::vector<float>(book.entry(i), book.entry(i) + v));
        REQUIRE(uniq.size() == static_cast<std::size_t>(book.size()));

        Rng rng(11, 2);
        LatentCube codes(s, 16);
        for (auto& c : codes.indices) c = static_cast<std::uint16_t>(rng.uniform_u32(16));
        auto cube = book.lookup_cube(codes);
        REQUIRE(book.quantize_cube(cube, s).indices == codes.indices);
    }

    SECTION("out-of-range code throws") {
        LatentCube codes(s, 16);
        std::fill(codes.indices.begin(), codes.indices.end(), std::uint16_t{16});
        REQUIRE_THROWS(book.lookup_cube(codes));
    }

    SECTION("mismatched codebook size throws") {
        LatentCube codes(s, 8);
        REQUIRE_THROWS_WITH(book.lookup_cube(codes),
                            Catch::Matchers::ContainsSubstring("different codebook size"));
    }
}

TEST_CASE("vq losses follow the two-term form", "[codebook]") {
    const int v = 2;

    SECTION("matching vectors give zero loss") {
        std::vector<float> z = {0.5f, -0.25f};
        auto losses = vq_losses(z, z, 1, v, 0.25);
        REQUIRE(losses.vq == 0.0);
        REQUIRE(losses.commit == 0.0);
    }

    SECTION("hand-computed unit offset") {
        std::vector<float> z = {1.0f, 0.0f};
        std::vector<float> e = {0.0f, 0.0f};
        auto losses = vq_losses(z, e, 1, v, 0.25);
        REQUIRE(losses.vq == Approx(1.0).margin(1e-12));
        REQUIRE(losses.commit == Approx(0.25).margin(1e-12));
    }

    SECTION("commitment scales linearly in beta") {
        Rng rng(13, 0);
        std::vector<float> z(3 * v), e(3 * v);
        for (auto& x : z) x = static_cast<float>(rng.normal());
        for (auto& x : e) x = static_cast<float>(rng.normal());
        auto a = vq_losses(z, e, 3, v, 0.25);
        auto b = vq_losses(z, e, 3, v, 0.5);
        REQUIRE(b.commit == Approx(2.0 * a.commit).epsilon(1e-12));
        REQUIRE(b.vq == a.vq);
        auto zero = vq_losses(z, e, 3, v, 0.0);
        REQUIRE(zero.commit == 0.0);
    }
}

TEST_CASE("usage counters track quantization", "[codebook]") {
    Codebook book(4, 2, 21);
    set_entries(book, {{0.0f, 0.0f}, {1.0f, 1.0f}, {-1.0f, -1.0f}, {5.0f, 5.0f}});
    std::vector<float> z0 = {0.1f, 0.0f};
    std::vector<float> z1 = {0.9f, 1.1f};
    book.quantize(z0.data());
    book.quantize(z0.data());
    book.quantize(z1.data());
    const auto& usage = book.usage_counts();
    REQUIRE(usage[0] == 2);
    REQUIRE(usage[1] == 1);
    REQUIRE(usage[2] == 0);
    REQUIRE(usage[3] == 0);
}

TEST_CASE("restart replaces exactly the unused entries on schedule", "[codebook]") {
    const int k = 12, v = 2;
    Codebook book(k, v, 33, 25);
    Rng rng(14, 0);

    // pool of replacement latents, all far from every entry so replacements
    // are recognizable
    std::vector<float> pool(6 * v);
    for (auto& x : pool) x = static_cast<float>(10.0 + rng.uniform(0.0, 1.0));

    auto touch_all_but = [&](const std::set<int>& skip) {
        for (int i = 0; i < k; ++i) {
            if (skip.count(i)) continue;
            std::vector<float> z(book.entry(i), book.entry(i) + v);
            book.quantize(z.data());
        }
    };

    SECTION("entries 5 and 9 unused are replaced at batch 25, next at 75") {
        std::vector<float> before(book.raw_entries());
        for (int batch = 1; batch <= 24; ++batch) {
            touch_all_but({5, 9});
            std::vector<int> replaced;
            REQUIRE(book.restart_unused(pool, 6, 99, &replaced) == 0);
            REQUIRE(replaced.empty());
        }
        REQUIRE(book.raw_entries() == before);

        touch_all_but({5, 9});
        std::vector<int> replaced;
        REQUIRE(book.restart_unused(pool, 6, 99, &replaced) == 2);
        REQUIRE(replaced == std::vector<int>{5, 9});
        for (int i = 0; i < k; ++i) {
            bool touched = (i == 5 || i == 9);
            bool changed = !std::equal(book.entry(i), book.entry(i) + v, &before[i * v]);
            REQUIRE(changed == touched);
            if (touched)
                for (int j = 0; j < v; ++j) REQUIRE(book.entry(i)[j] >= 10.0f);
        }
        REQUIRE(book.restart_interval() == 50);
        REQUIRE(book.batches_since_restart() == 0);
        for (long u : book.usage_counts()) REQUIRE(u == 0);

        // second restart happens 50 batches later, i.e. at cumulative batch 75
        for (int batch = 0; batch < 49; ++batch) {
            touch_all_but({3});
            REQUIRE(book.restart_unused(pool, 6, 99) == 0);
        }
        touch_all_but({3});
        replaced.clear();
        REQUIRE(book.restart_unused(pool, 6, 99, &replaced) == 1);
        REQUIRE(replaced == std::vector<int>{3});
        REQUIRE(book.restart_interval() == 100);
    }

    SECTION("all entries used leaves values intact but doubles the interval") {
        std::vector<float> before(book.raw_entries());
        // quantize does not advance the batch counter; only restart_unused does
        for (int batch = 0; batch < 25; ++batch) {
            touch_all_but({});
            REQUIRE(book.restart_unused(pool, 6, 1) == 0);
        }
        REQUIRE(book.raw_entries() == before);
        REQUIRE(book.restart_interval() == 50);
        for (long u : book.usage_counts()) REQUIRE(u == 0);
    }

    SECTION("both entries of a two-entry book take the only pool row") {
        Codebook pair(2, v, 8, 1);
        std::vector<float> row = {4.5f, -3.25f};
        std::vector<int> replaced;
        REQUIRE(pair.restart_unused(row, 1, 77, &replaced) == 2);
        REQUIRE(replaced == std::vector<int>{0, 1});
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < v; ++j) REQUIRE(pair.entry(i)[j] == row[j]);
    }

    SECTION("an empty pool with unused entries is an error") {
        Codebook tiny(2, v, 8, 1);
        REQUIRE_THROWS_WITH(tiny.restart_unused({}, 0, 1),
                            Catch::Matchers::ContainsSubstring("pool"));
    }

    SECTION("an empty pool is fine when every entry is used") {
        Codebook tiny(2, v, 8, 1);
        for (int i = 0; i < 2; ++i) {
            std::vector<float> z(tiny.entry(i), tiny.entry(i) + v);
            tiny.quantize(z.data());
        }
        REQUIRE(tiny.restart_unused({}, 0, 1) == 0);
        REQUIRE(tiny.restart_interval() == 2);
    }
}

TEST_CASE("restart choices are seed deterministic", "[codebook]") {
    const int v = 3;
    auto run = [&](std::uint64_t seed) {
        Codebook book(6, v, 55, 1);
        Rng rng(16, 0);
        std::vector<float> pool(10 * v);
        for (auto& x : pool) x = static_cast<float>(rng.normal());
        book.restart_unused(pool, 10, seed);
        return book.raw_entries();
    };
    REQUIRE(run(123) == run(123));
    REQUIRE(run(123) != run(124));
}
