#include "cvis/error.hpp"
#include "cvis/inpaint.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

namespace cvis {
namespace {

using Hidden = std::array<bool, kPartCount>;

Hidden hide(std::initializer_list<int> parts) {
    Hidden h{};
    for (int p : parts) h[p - 1] = true;
    return h;
}

TextureAtlas with_holes(const TextureAtlas& a, std::uint64_t seed, double fraction) {
    TextureAtlas out = a;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& v : out.valid) v = u(rng) < fraction ? 0 : 1;
    return out;
}

void expect_valid_texels_kept(const TextureAtlas& before, const TextureAtlas& after) {
    ASSERT_EQ(before.resolution, after.resolution);
    for (std::size_t i = 0; i < before.texel_count(); ++i) {
        if (before.valid[i]) {
            ASSERT_EQ(before.color[i], after.color[i]);
        }
    }
    EXPECT_TRUE(after.complete());
}

TEST(FillPureColor, UniformValidRegion) {
    TextureAtlas a(12, {100, 100, 100}, false);
    for (std::size_t i = 0; i < a.texel_count(); i += 3) a.valid[i] = 1;
    for (std::size_t i = 0; i < a.texel_count(); ++i) {
        if (!a.valid[i]) a.color[i] = {7, 7, 7};
    }
    const TextureAtlas f = fill_pure_color(a);
    for (const Rgb& c : f.color) EXPECT_EQ(c, (Rgb{100, 100, 100}));
    EXPECT_TRUE(f.complete());
}

TEST(FillPureColor, MeanOfTwoHalves) {
    TextureAtlas a(12);
    for (std::size_t i = 0; i < a.texel_count(); ++i) {
        if (i % 2 == 0) {
            a.valid[i] = 1;
            a.color[i] = (i % 4 == 0) ? Rgb{0, 0, 0} : Rgb{200, 200, 200};
        }
    }
    const TextureAtlas f = fill_pure_color(a);
    for (std::size_t i = 1; i < f.texel_count(); i += 2) EXPECT_EQ(f.color[i], (Rgb{100, 100, 100}));
    expect_valid_texels_kept(a, f);
}

TEST(FillPureColor, FullAtlasUnchangedAndEmptyRejected) {
    const TextureAtlas full = make_procedural_atlas(24, 1);
    EXPECT_EQ(fill_pure_color(full), full);
    try {
        fill_pure_color(TextureAtlas(12));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::no_valid_texels);
    }
}

TEST(FillKnn, SingleHoleInUniformField) {
    TextureAtlas a(12, {100, 100, 100}, true);
    a.valid[a.index(5, 5)] = 0;
    a.color[a.index(5, 5)] = {0, 0, 0};
    EXPECT_EQ(fill_knn(a, 4).color[a.index(5, 5)], (Rgb{100, 100, 100}));
}

TEST(FillKnn, EquidistantPair) {
    TextureAtlas a(12);
    a.valid[a.index(3, 4)] = 1;
    a.color[a.index(3, 4)] = {0, 0, 0};
    a.valid[a.index(7, 4)] = 1;
    a.color[a.index(7, 4)] = {200, 200, 200};
    EXPECT_EQ(fill_knn(a, 2).color[a.index(5, 4)], (Rgb{100, 100, 100}));
}

// All-pairs oracle: rank every valid texel by (squared distance, row-major index).
Rgb knn_oracle(const TextureAtlas& a, int x, int y, int k) {
    std::vector<std::pair<long, std::size_t>> all;
    for (int yy = 0; yy < a.resolution; ++yy) {
        for (int xx = 0; xx < a.resolution; ++xx) {
            if (!a.valid[a.index(xx, yy)]) continue;
            const long dx = xx - x, dy = yy - y;
            all.emplace_back(dx * dx + dy * dy, a.index(xx, yy));
        }
    }
    std::sort(all.begin(), all.end());
    Vec3 acc = Vec3::Zero();
    double wsum = 0.0;
    for (int i = 0; i < k; ++i) {
        const double w = 1.0 / std::sqrt(static_cast<double>(all[i].first));
        const Rgb& c = a.color[all[i].second];
        acc += w * Vec3(c[0], c[1], c[2]);
        wsum += w;
    }
    const Vec3 v = acc / wsum;
    return {static_cast<std::uint8_t>(std::lround(v[0])), static_cast<std::uint8_t>(std::lround(v[1])),
            static_cast<std::uint8_t>(std::lround(v[2]))};
}

TEST(FillKnn, GradientHoleMatchesBruteForceOracle) {
    TextureAtlas a(18, {0, 0, 0}, true);
    for (int y = 0; y < 18; ++y) {
        for (int x = 0; x < 18; ++x) {
            const auto v = static_cast<std::uint8_t>(x * 15);
            a.color[a.index(x, y)] = {v, static_cast<std::uint8_t>(255 - v), 128};
        }
    }
    for (int y = 6; y < 10; ++y) {
        for (int x = 7; x < 11; ++x) a.valid[a.index(x, y)] = 0;
    }
    const TextureAtlas f = fill_knn(a, 8);
    expect_valid_texels_kept(a, f);
    for (int y = 6; y < 10; ++y) {
        for (int x = 7; x < 11; ++x) EXPECT_EQ(f.color[a.index(x, y)], knn_oracle(a, x, y, 8)) << x << "," << y;
    }
}

TEST(FillKnn, RandomHolesMatchOracle) {
    const TextureAtlas a = with_holes(make_procedural_atlas(24, 3), 5, 0.6);
    for (int k : {1, 3, 7}) {
        const TextureAtlas f = fill_knn(a, k);
        expect_valid_texels_kept(a, f);
        for (int y = 0; y < 24; ++y) {
            for (int x = 0; x < 24; ++x) {
                if (!a.valid[a.index(x, y)]) {
                    ASSERT_EQ(f.color[a.index(x, y)], knn_oracle(a, x, y, k));
                }
            }
        }
    }
}

TEST(FillKnn, AllValidTexelsGiveWeightedGlobalMean) {
    const TextureAtlas a = with_holes(make_procedural_atlas(12, 8), 2, 0.5);
    const int k = static_cast<int>(a.valid_count());
    const TextureAtlas f = fill_knn(a, k);
    for (int y = 0; y < 12; ++y) {
        for (int x = 0; x < 12; ++x) {
            if (a.valid[a.index(x, y)]) continue;
            Vec3 acc = Vec3::Zero();
            double wsum = 0.0;
            for (int yy = 0; yy < 12; ++yy) {
                for (int xx = 0; xx < 12; ++xx) {
                    if (!a.valid[a.index(xx, yy)]) continue;
                    const double w = 1.0 / std::hypot(xx - x, yy - y);
                    const Rgb& c = a.color[a.index(xx, yy)];
                    acc += w * Vec3(c[0], c[1], c[2]);
                    wsum += w;
                }
            }
            const Vec3 mean = acc / wsum;
            for (int ch = 0; ch < 3; ++ch) EXPECT_NEAR(f.color[a.index(x, y)][ch], mean[ch], 0.5 + 1e-9);
        }
    }
}

TEST(FillKnn, TooFewValidTexels) {
    TextureAtlas a(12);
    a.valid[0] = a.valid[1] = 1;
    try {
        fill_knn(a, 3);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::insufficient_valid_texels);
    }
}

std::size_t encoder_parameter_count(const GraphInpaintNet::Shape& s) {
    std::size_t n = 0;
    int cin = 4;
    for (int w : s.widths) {
        n += static_cast<std::size_t>(w) * cin * 9 + 2 * static_cast<std::size_t>(w);
        cin = 2 * w;
    }
    return n;
}

TEST(GraphInpaintNet, RejectsMismatchedAtlas) {
    const GraphInpaintNet net = GraphInpaintNet::for_resolution(48, 0);
    try {
        graph_forward(net, make_procedural_atlas(36, 0));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::shape_mismatch);
    }
}

TEST(GraphInpaintNet, IdenticalPartsGiveIdenticalEncoderStreams) {
    const GraphInpaintNet net = GraphInpaintNet::for_resolution(48, 1);
    const TextureAtlas src = with_holes(make_procedural_atlas(48, 2), 3, 0.3);
    TextureAtlas a = src;
    const CellRect c1 = src.cell(1);
    for (int p = 2; p <= kPartCount; ++p) {
        const CellRect c = src.cell(p);
        for (int y = 0; y < c.height; ++y) {
            for (int x = 0; x < c.width; ++x) {
                a.color[a.index(c.x0 + x, c.y0 + y)] = src.color[src.index(c1.x0 + x, c1.y0 + y)];
                a.valid[a.index(c.x0 + x, c.y0 + y)] = src.valid[src.index(c1.x0 + x, c1.y0 + y)];
            }
        }
    }
    const auto trace = graph_forward(net, a);
    for (std::size_t l = 0; l < trace.encoder.size(); ++l) {
        const auto& first = trace.encoder[l][0];
        for (int p = 1; p < kPartCount; ++p) ASSERT_EQ(trace.encoder[l][p], first) << "level " << l;
        // aggregate of equal features is that feature: the two halves of each position agree
        const int width = net.shape().widths[l];
        for (std::size_t pos = 0; pos < first.size() / (2 * width); ++pos) {
            for (int ch = 0; ch < width; ++ch) {
                ASSERT_EQ(first[pos * 2 * width + ch], first[pos * 2 * width + width + ch]);
            }
        }
    }
    // decoders are part specific
    EXPECT_NE(trace.output[0], trace.output[1]);
}

TEST(GraphInpaintNet, PermutingPartsAndDecodersPermutesOutputs) {
    const GraphInpaintNet net = GraphInpaintNet::for_resolution(48, 4);
    const TextureAtlas a = with_holes(make_procedural_atlas(48, 5), 6, 0.4);
    std::vector<int> perm(kPartCount);
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(3);
    std::shuffle(perm.begin(), perm.end(), rng);

    TextureAtlas b = a;
    for (int p = 0; p < kPartCount; ++p) {
        const CellRect from = a.cell(p + 1), to = a.cell(perm[p] + 1);
        for (int y = 0; y < from.height; ++y) {
            for (int x = 0; x < from.width; ++x) {
                b.color[b.index(to.x0 + x, to.y0 + y)] = a.color[a.index(from.x0 + x, from.y0 + y)];
                b.valid[b.index(to.x0 + x, to.y0 + y)] = a.valid[a.index(from.x0 + x, from.y0 + y)];
            }
        }
    }
    GraphInpaintNet moved = net;
    const std::size_t enc = encoder_parameter_count(net.shape());
    const std::size_t block = (net.parameters().size() - enc) / kPartCount;
    for (int p = 0; p < kPartCount; ++p) {
        std::copy_n(net.parameters().begin() + static_cast<std::ptrdiff_t>(enc + p * block), block,
                    moved.parameters().begin() + static_cast<std::ptrdiff_t>(enc + perm[p] * block));
    }
    const auto ta = graph_forward(net, a);
    const auto tb = graph_forward(moved, b);
    for (int p = 0; p < kPartCount; ++p) {
        const auto& x = ta.output[p];
        const auto& y = tb.output[perm[p]];
        ASSERT_EQ(x.size(), y.size());
        for (std::size_t i = 0; i < x.size(); ++i) ASSERT_NEAR(x[i], y[i], 1e-12);
    }
}

// Samples parameters that can influence the loss: the shared encoder and the
// hidden parts' decoders. Returns how many agree with a central difference of
// step h to relative error < tol.
int finite_difference_agreement(double h, double tol) {
    GraphInpaintNet net = GraphInpaintNet::for_resolution(96, 7);  // 16-texel-wide part patches
    const TextureAtlas a = with_holes(make_procedural_atlas(96, 9), 10, 0.2);
    const Hidden hidden = hide({2, 5, 9, 13, 16});
    std::vector<double> grad;
    net.loss(a, hidden, &grad);

    const std::size_t enc = encoder_parameter_count(net.shape());
    const std::size_t block = (net.parameters().size() - enc) / kPartCount;
    std::vector<std::size_t> live(enc);
    std::iota(live.begin(), live.end(), 0);
    for (int p = 0; p < kPartCount; ++p) {
        if (!hidden[p]) continue;
        for (std::size_t i = 0; i < block; ++i) live.push_back(enc + p * block + i);
    }
    std::mt19937_64 rng(0);
    int passed = 0;
    auto& params = net.parameters();
    for (int s = 0; s < 200; ++s) {
        const std::size_t i = live[rng() % live.size()];
        const double keep = params[i];
        params[i] = keep + h;
        const double up = net.loss(a, hidden);
        params[i] = keep - h;
        const double down = net.loss(a, hidden);
        params[i] = keep;
        const double numeric = (up - down) / (2 * h);
        const double scale = std::max(std::abs(numeric), std::abs(grad[i]));
        const double rel = scale < 1e-12 ? 0.0 : std::abs(numeric - grad[i]) / scale;
        passed += rel < tol ? 1 : 0;
    }
    return passed;
}

// Known failure: at step 1e-3 about 1% of sampled parameters straddle a ReLU or
// cross-part max kink, so agreement lands right at the 99% bar (197 here).
TEST(GraphInpaintNet, AnalyticGradientMatchesFiniteDifferences) {
    EXPECT_GE(finite_difference_agreement(1e-3, 1e-3), 198);
}

// Same samples with a step small enough to stay inside one linear region.
TEST(GraphInpaintNet, AnalyticGradientMatchesSmallStepDifferences) {
    EXPECT_EQ(finite_difference_agreement(1e-5, 1e-5), 200);
}

TEST(GraphInpaintNet, LossIgnoresNeverValidTexels) {
    const TextureAtlas a = with_holes(make_procedural_atlas(48, 11), 12, 0.3);
    TextureAtlas zeroed = a;
    for (std::size_t i = 0; i < a.texel_count(); ++i) {
        if (!a.valid[i]) zeroed.color[i] = {0, 0, 0};
    }
    GraphInpaintNet n1 = GraphInpaintNet::for_resolution(48, 2);
    GraphInpaintNet n2 = n1;
    std::mt19937_64 r1(5), r2(5);
    const double l1 = train_step(n1, a, r1, {0.05});
    const double l2 = train_step(n2, zeroed, r2, {0.05});
    EXPECT_EQ(l1, l2);
    EXPECT_EQ(n1, n2);
}

TEST(TrainStep, ZeroLearningRateLeavesNetBitwiseAndIsDeterministic) {
    const TextureAtlas a = make_procedural_atlas(48, 3);
    const GraphInpaintNet start = GraphInpaintNet::for_resolution(48, 3);
    GraphInpaintNet frozen = start;
    std::mt19937_64 rng(1);
    const double l = train_step(frozen, a, rng, {0.0});
    EXPECT_TRUE(std::isfinite(l));
    EXPECT_EQ(frozen, start);

    GraphInpaintNet x = start, y = start;
    std::mt19937_64 rx(9), ry(9);
    EXPECT_EQ(train_step(x, a, rx, {0.05}), train_step(y, a, ry, {0.05}));
    EXPECT_EQ(x, y);
    EXPECT_NE(x, start);
}

TEST(TrainStep, NeedsTwoValidParts) {
    TextureAtlas a(48);
    const CellRect c = a.cell(4);
    for (int y = c.y0; y < c.y0 + c.height; ++y) {
        for (int x = c.x0; x < c.x0 + c.width; ++x) a.valid[a.index(x, y)] = 1;
    }
    GraphInpaintNet net = GraphInpaintNet::for_resolution(48, 0);
    std::mt19937_64 rng(0);
    try {
        train_step(net, a, rng);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::insufficient_valid_parts);
    }
}

TEST(TrainStep, HiddenSubsetIsNonemptyAndStrict) {
    TextureAtlas a = make_procedural_atlas(48, 0);
    // only parts 3 and 11 have valid texels
    for (int y = 0; y < 48; ++y) {
        for (int x = 0; x < 48; ++x) {
            const int p = a.part_of(x, y);
            a.valid[a.index(x, y)] = (p == 3 || p == 11) ? 1 : 0;
        }
    }
    std::mt19937_64 rng(4);
    for (int i = 0; i < 100; ++i) {
        const Hidden h = draw_hidden_parts(a, rng);
        ASSERT_NE(h[2], h[10]);
        for (int p = 0; p < kPartCount; ++p) {
            if (p != 2 && p != 10) {
                ASSERT_FALSE(h[p]);
            }
        }
    }
}

TEST(TrainStep, OverfitsSingleAtlas) {
    const TextureAtlas a = make_procedural_atlas(96, 0);  // 16 x 32 texel part patches
    GraphInpaintNet net = GraphInpaintNet::for_resolution(96, 0);
    const Hidden probe = hide({2, 10, 15, 17});
    const double before = net.loss(a, probe);
    std::mt19937_64 rng(0);
    for (int i = 0; i < 200; ++i) train_step(net, a, rng, {0.05});
    const double after = net.loss(a, probe);
    EXPECT_LT(after, 0.5 * before) << before << " -> " << after;
}

TEST(InpaintWithNet, KeepsValidTexelsAndCompletesMask) {
    const GraphInpaintNet net = GraphInpaintNet::for_resolution(48, 0);
    const TextureAtlas full = make_procedural_atlas(48, 6);
    EXPECT_EQ(inpaint_with_net(net, full), full);
    const TextureAtlas holes = with_holes(full, 1, 0.5);
    expect_valid_texels_kept(holes, inpaint_with_net(net, holes));
}

TEST(InpaintWithNet, BeatsPureColorOnHeldOutParts) {
    const InpaintBenchmarkResult r = run_inpaint_benchmark({});
    EXPECT_LT(r.last_loss, r.first_loss);
    EXPECT_LT(r.net_mae, r.pure_color_mae) << "net " << r.net_mae << " pure " << r.pure_color_mae;
}

TEST(GraphInpaintNet, SaveLoadRoundTrip) {
    const auto dir = std::filesystem::temp_directory_path() / "cvis_inpaint_test";
    std::filesystem::create_directories(dir);
    GraphInpaintNet net = GraphInpaintNet::for_resolution(36, 5, {4, 8, 8, 16});
    EXPECT_EQ(GraphInpaintNet::load((net.save(dir / "a.net"), dir / "a.net")), net);
    std::vector<TextureAtlas> atlases{make_procedural_atlas(36, 1), make_procedural_atlas(36, 2)};
    std::mt19937_64 rng(0);
    calibrate_normalization(net, atlases, rng);
    ASSERT_TRUE(net.calibrated());
    net.save(dir / "b.net");
    const GraphInpaintNet back = GraphInpaintNet::load(dir / "b.net");
    EXPECT_EQ(back, net);
    EXPECT_EQ(graph_forward(back, atlases[0]).output, graph_forward(net, atlases[0]).output);

    // bump the version field
    std::fstream f(dir / "b.net", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    const std::uint32_t v = 2;
    f.write(reinterpret_cast<const char*>(&v), sizeof(v));
    f.close();
    try {
        GraphInpaintNet::load(dir / "b.net");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::schema_version_mismatch);
    }
}

}  // namespace
}  // namespace cvis
