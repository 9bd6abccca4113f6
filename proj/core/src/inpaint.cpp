#include "cvis/inpaint.hpp"

#include "cvis/error.hpp"
#include "cvis/geom.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

namespace cvis {

namespace {

std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

}  // namespace

TextureAtlas fill_pure_color(const TextureAtlas& atlas) {
    Vec3 sum = Vec3::Zero();
    std::size_t n = 0;
    for (std::size_t i = 0; i < atlas.texel_count(); ++i) {
        if (!atlas.valid[i]) continue;
        sum += Vec3(atlas.color[i][0], atlas.color[i][1], atlas.color[i][2]);
        ++n;
    }
    if (n == 0) throw Error(ErrorCode::no_valid_texels, "atlas has no valid texels");
    const Vec3 mean = sum / static_cast<double>(n);
    const Rgb fill{to_u8(mean[0]), to_u8(mean[1]), to_u8(mean[2])};
    TextureAtlas out = atlas;
    for (std::size_t i = 0; i < out.texel_count(); ++i) {
        if (!out.valid[i]) out.color[i] = fill;
        out.valid[i] = 1;
    }
    return out;
}

TextureAtlas fill_knn(const TextureAtlas& atlas, int k) {
    if (k <= 0) throw Error(ErrorCode::invalid_argument, "k must be positive");
    if (atlas.valid_count() < static_cast<std::size_t>(k)) {
        throw Error(ErrorCode::insufficient_valid_texels,
                    "need " + std::to_string(k) + " valid texels, have " + std::to_string(atlas.valid_count()));
    }
    const int res = atlas.resolution;
    TextureAtlas out = atlas;
    struct Candidate {
        long d2;
        std::size_t index;
    };
    std::vector<Candidate> found;
    for (int y = 0; y < res; ++y) {
        for (int x = 0; x < res; ++x) {
            if (atlas.valid[atlas.index(x, y)]) continue;
            // Grow square rings; once k candidates lie within the ring's inscribed
            // circle no unvisited texel can beat them.
            found.clear();
            for (int r = 1;; ++r) {
                auto visit = [&](int cx, int cy) {
                    if (cx < 0 || cy < 0 || cx >= res || cy >= res) return;
                    const std::size_t i = atlas.index(cx, cy);
                    if (!atlas.valid[i]) return;
                    const long dx = cx - x, dy = cy - y;
                    found.push_back({dx * dx + dy * dy, i});
                };
                for (int dx = -r; dx <= r; ++dx) {
                    visit(x + dx, y - r);
                    visit(x + dx, y + r);
                }
                for (int dy = -r + 1; dy <= r - 1; ++dy) {
                    visit(x - r, y + dy);
                    visit(x + r, y + dy);
                }
                const long r2 = static_cast<long>(r) * r;
                const auto inside = std::count_if(found.begin(), found.end(), [&](const Candidate& c) { return c.d2 <= r2; });
                if (inside >= k || r > 2 * res) break;
            }
            std::partial_sort(found.begin(), found.begin() + k, found.end(), [](const Candidate& a, const Candidate& b) {
                return a.d2 != b.d2 ? a.d2 < b.d2 : a.index < b.index;
            });
            Vec3 acc = Vec3::Zero();
            double wsum = 0.0;
            for (int i = 0; i < k; ++i) {
                const double w = 1.0 / std::sqrt(static_cast<double>(found[i].d2));
                const Rgb& c = atlas.color[found[i].index];
                acc += w * Vec3(c[0], c[1], c[2]);
                wsum += w;
            }
            const Vec3 v = acc / wsum;
            out.color[atlas.index(x, y)] = {to_u8(v[0]), to_u8(v[1]), to_u8(v[2])};
        }
    }
    std::fill(out.valid.begin(), out.valid.end(), std::uint8_t{1});
    return out;
}

// ---------------------------------------------------------------------------
// Graph network

namespace {

constexpr double kBnEpsilon = 1e-5;
constexpr int kInputChannels = 4;

struct Size {
    int h, w;
    int area() const { return h * w; }
};

// Activations are stored position-major ([y][x][channel]); weights of both
// kernels are [source channel][tap][target channel], taps row-major over 3x3.

// y[i, j, o] = sum_c,ki,kj W[c, ki, kj, o] x[2i - 1 + ki, 2j - 1 + kj, c]
void conv_forward(const double* x, int cin, Size in, const double* W, int cout, Size out, double* y) {
    std::fill(y, y + static_cast<std::size_t>(cout) * out.area(), 0.0);
    for (int i = 0; i < out.h; ++i) {
        for (int j = 0; j < out.w; ++j) {
            double* yp = y + static_cast<std::size_t>(i * out.w + j) * cout;
            for (int ki = 0; ki < 3; ++ki) {
                const int yy = 2 * i - 1 + ki;
                if (yy < 0 || yy >= in.h) continue;
                for (int kj = 0; kj < 3; ++kj) {
                    const int xx = 2 * j - 1 + kj;
                    if (xx < 0 || xx >= in.w) continue;
                    const double* xp = x + static_cast<std::size_t>(yy * in.w + xx) * cin;
                    const int k = ki * 3 + kj;
                    for (int c = 0; c < cin; ++c) {
                        const double v = xp[c];
                        if (v == 0.0) continue;
                        const double* wp = W + (static_cast<std::size_t>(c) * 9 + k) * cout;
                        for (int o = 0; o < cout; ++o) yp[o] += v * wp[o];
                    }
                }
            }
        }
    }
}

void conv_backward(const double* x, int cin, Size in, const double* W, int cout, Size out, const double* dy,
                   double* dW, double* dx) {
    for (int i = 0; i < out.h; ++i) {
        for (int j = 0; j < out.w; ++j) {
            const double* dyp = dy + static_cast<std::size_t>(i * out.w + j) * cout;
            for (int ki = 0; ki < 3; ++ki) {
                const int yy = 2 * i - 1 + ki;
                if (yy < 0 || yy >= in.h) continue;
                for (int kj = 0; kj < 3; ++kj) {
                    const int xx = 2 * j - 1 + kj;
                    if (xx < 0 || xx >= in.w) continue;
                    const std::size_t tap = static_cast<std::size_t>(yy * in.w + xx) * cin;
                    const int k = ki * 3 + kj;
                    for (int c = 0; c < cin; ++c) {
                        const double v = x[tap + c];
                        const double* wp = W + (static_cast<std::size_t>(c) * 9 + k) * cout;
                        double* dwp = dW + (static_cast<std::size_t>(c) * 9 + k) * cout;
                        double g = 0.0;
                        for (int o = 0; o < cout; ++o) {
                            dwp[o] += v * dyp[o];
                            g += wp[o] * dyp[o];
                        }
                        if (dx) dx[tap + c] += g;
                    }
                }
            }
        }
    }
}

// Transposed counterpart: y[2i - 1 + ki, 2j - 1 + kj, o] += x[i, j, c] W[c, ki, kj, o], cropped to `out`, plus bias.
void deconv_forward(const double* x, int cin, Size in, const double* W, const double* b, int cout, Size out,
                    double* y) {
    for (int q = 0; q < out.area(); ++q) std::copy(b, b + cout, y + static_cast<std::size_t>(q) * cout);
    for (int i = 0; i < in.h; ++i) {
        for (int j = 0; j < in.w; ++j) {
            const double* xp = x + static_cast<std::size_t>(i * in.w + j) * cin;
            for (int ki = 0; ki < 3; ++ki) {
                const int yy = 2 * i - 1 + ki;
                if (yy < 0 || yy >= out.h) continue;
                for (int kj = 0; kj < 3; ++kj) {
                    const int xx = 2 * j - 1 + kj;
                    if (xx < 0 || xx >= out.w) continue;
                    double* yp = y + static_cast<std::size_t>(yy * out.w + xx) * cout;
                    const int k = ki * 3 + kj;
                    for (int c = 0; c < cin; ++c) {
                        const double v = xp[c];
                        if (v == 0.0) continue;
                        const double* wp = W + (static_cast<std::size_t>(c) * 9 + k) * cout;
                        for (int o = 0; o < cout; ++o) yp[o] += v * wp[o];
                    }
                }
            }
        }
    }
}

void deconv_backward(const double* x, int cin, Size in, const double* W, int cout, Size out, const double* dy,
                     double* dW, double* db, double* dx) {
    for (int q = 0; q < out.area(); ++q) {
        const double* dyp = dy + static_cast<std::size_t>(q) * cout;
        for (int o = 0; o < cout; ++o) db[o] += dyp[o];
    }
    for (int i = 0; i < in.h; ++i) {
        for (int j = 0; j < in.w; ++j) {
            const std::size_t src = static_cast<std::size_t>(i * in.w + j) * cin;
            for (int ki = 0; ki < 3; ++ki) {
                const int yy = 2 * i - 1 + ki;
                if (yy < 0 || yy >= out.h) continue;
                for (int kj = 0; kj < 3; ++kj) {
                    const int xx = 2 * j - 1 + kj;
                    if (xx < 0 || xx >= out.w) continue;
                    const double* dyp = dy + static_cast<std::size_t>(yy * out.w + xx) * cout;
                    const int k = ki * 3 + kj;
                    for (int c = 0; c < cin; ++c) {
                        const double v = x[src + c];
                        const double* wp = W + (static_cast<std::size_t>(c) * 9 + k) * cout;
                        double* dwp = dW + (static_cast<std::size_t>(c) * 9 + k) * cout;
                        double g = 0.0;
                        for (int o = 0; o < cout; ++o) {
                            dwp[o] += v * dyp[o];
                            g += wp[o] * dyp[o];
                        }
                        dx[src + c] += g;
                    }
                }
            }
        }
    }
}

std::vector<Size> level_sizes(const GraphInpaintNet::Shape& s) {
    std::vector<Size> sizes{{s.patch_height, s.patch_width}};
    for (std::size_t l = 0; l < s.widths.size(); ++l) {
        const Size p = sizes.back();
        sizes.push_back({(p.h + 1) / 2, (p.w + 1) / 2});
    }
    return sizes;
}

}  // namespace

struct GraphInpaintNet::Layout {
    std::vector<Size> sizes;
    std::vector<int> enc_in, enc_out;
    std::vector<std::size_t> enc_w, enc_gamma, enc_beta;
    std::vector<std::size_t> stat;  // offset of each level's channels in the normalization statistics
    std::vector<int> dec_ch;        // L + 1 entries
    // [part][layer]
    std::array<std::vector<std::size_t>, kPartCount> dec_w, dec_b;
    std::size_t total = 0;
    std::size_t stat_total = 0;
};

namespace {

// Forward state for a batch of S = 18 * atlases streams, kept for the backward pass.
struct Cache {
    int streams = 0;
    // [level][stream]
    std::vector<std::vector<std::vector<double>>> x;     // level inputs; x[L] feeds the decoders
    std::vector<std::vector<std::vector<double>>> zhat;  // normalized pre-activations
    std::vector<std::vector<std::vector<double>>> act;   // post-ReLU
    std::vector<std::vector<int>> argmax;                // [level][atlas * n + element] winning stream
    std::vector<std::vector<double>> inv_std;            // [level][channel]
    // [stream][layer] decoder layer inputs; last entry is the output
    std::vector<std::vector<std::vector<double>>> dec;
};

}  // namespace

GraphInpaintNet::Layout GraphInpaintNet::layout() const {
    Layout lo;
    const int L = levels();
    lo.sizes = level_sizes(shape_);
    std::size_t off = 0;
    for (int l = 0; l < L; ++l) {
        const int cin = l == 0 ? kInputChannels : 2 * shape_.widths[l - 1];
        const int cout = shape_.widths[l];
        lo.enc_in.push_back(cin);
        lo.enc_out.push_back(cout);
        lo.enc_w.push_back(off);
        off += static_cast<std::size_t>(cout) * cin * 9;
        lo.enc_gamma.push_back(off);
        off += cout;
        lo.enc_beta.push_back(off);
        off += cout;
        lo.stat.push_back(lo.stat_total);
        lo.stat_total += cout;
    }
    lo.dec_ch.push_back(2 * shape_.widths[L - 1]);
    for (int d = 1; d < L; ++d) lo.dec_ch.push_back(shape_.widths[L - 1 - d]);
    lo.dec_ch.push_back(3);
    for (int p = 0; p < kPartCount; ++p) {
        for (int d = 0; d < L; ++d) {
            lo.dec_w[p].push_back(off);
            off += static_cast<std::size_t>(lo.dec_ch[d]) * lo.dec_ch[d + 1] * 9;
            lo.dec_b[p].push_back(off);
            off += lo.dec_ch[d + 1];
        }
    }
    lo.total = off;
    return lo;
}

GraphInpaintNet::GraphInpaintNet(Shape shape, std::uint64_t seed) : shape_(std::move(shape)) {
    if (shape_.patch_width <= 0 || shape_.patch_height <= 0 || shape_.widths.empty() ||
        std::any_of(shape_.widths.begin(), shape_.widths.end(), [](int w) { return w <= 0; })) {
        throw Error(ErrorCode::invalid_argument, "invalid network shape");
    }
    const Layout lo = layout();
    params_.assign(lo.total, 0.0);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const int L = levels();
    for (int l = 0; l < L; ++l) {
        const double s = std::sqrt(2.0 / (lo.enc_in[l] * 9.0));
        const std::size_t n = static_cast<std::size_t>(lo.enc_out[l]) * lo.enc_in[l] * 9;
        for (std::size_t i = 0; i < n; ++i) params_[lo.enc_w[l] + i] = s * normal(rng);
        for (int c = 0; c < lo.enc_out[l]; ++c) params_[lo.enc_gamma[l] + c] = 1.0;
    }
    for (int p = 0; p < kPartCount; ++p) {
        for (int d = 0; d < L; ++d) {
            const bool last = d == L - 1;
            // each output texel of a stride-2 transposed conv sees about 9/4 input taps per channel
            const double s = (last ? 0.5 : 1.0) * std::sqrt(2.0 / (lo.dec_ch[d] * 2.25));
            const std::size_t n = static_cast<std::size_t>(lo.dec_ch[d]) * lo.dec_ch[d + 1] * 9;
            for (std::size_t i = 0; i < n; ++i) params_[lo.dec_w[p][d] + i] = s * normal(rng);
            if (last) {
                for (int c = 0; c < 3; ++c) params_[lo.dec_b[p][d] + c] = 0.5;
            }
        }
    }
}

GraphInpaintNet GraphInpaintNet::for_resolution(int resolution, std::uint64_t seed, std::vector<int> widths) {
    if (resolution <= 0 || resolution % kAtlasColumns != 0) {
        throw Error(ErrorCode::invalid_argument, "atlas resolution must be a positive multiple of 6");
    }
    return GraphInpaintNet(Shape{resolution / kAtlasColumns, resolution / kAtlasRows, std::move(widths)}, seed);
}

void GraphInpaintNet::check_atlas(const TextureAtlas& atlas) const {
    if (atlas.resolution <= 0 || atlas.cell_width() != shape_.patch_width || atlas.cell_height() != shape_.patch_height) {
        throw Error(ErrorCode::shape_mismatch, "atlas cells are " + std::to_string(atlas.cell_width()) + "x" +
                                                   std::to_string(atlas.cell_height()) + ", network expects " +
                                                   std::to_string(shape_.patch_width) + "x" +
                                                   std::to_string(shape_.patch_height));
    }
}

GraphInpaintNet::Input GraphInpaintNet::make_input(const TextureAtlas& atlas,
                                                   const std::array<bool, kPartCount>& hidden) const {
    check_atlas(atlas);
    const int w = shape_.patch_width, h = shape_.patch_height, area = w * h;
    Input in;  // [y][x][rgb + mask]
    for (int p = 0; p < kPartCount; ++p) {
        auto& v = in[p];
        v.assign(static_cast<std::size_t>(kInputChannels) * area, 0.0);
        if (hidden[p]) continue;
        const CellRect cell = atlas.cell(p + 1);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const std::size_t t = atlas.index(cell.x0 + x, cell.y0 + y);
                if (!atlas.valid[t]) continue;
                double* px = v.data() + static_cast<std::size_t>(y * w + x) * kInputChannels;
                for (int ch = 0; ch < 3; ++ch) px[ch] = atlas.color[t][ch] / 255.0;
                px[3] = 1.0;
            }
        }
    }
    return in;
}

namespace {

// Runs the encoder and decoders over the given streams (18 per atlas). With
// `mean`/`var` set, normalization uses those fixed statistics; otherwise the
// batch statistics over all streams, which are then written to `batch_mean` /
// `batch_var` when those are given.
void run_forward(const GraphInpaintNet& net, const GraphInpaintNet::Layout& lo,
                 std::vector<std::vector<double>> streams, Cache& cache, const std::vector<double>* mean_in,
                 const std::vector<double>* var_in, std::vector<double>* batch_mean = nullptr,
                 std::vector<double>* batch_var = nullptr) {
    const std::vector<double>& P = net.parameters();
    const int L = net.levels();
    const int S = static_cast<int>(streams.size());
    const int atlases = S / kPartCount;
    cache.streams = S;
    cache.x.assign(L + 1, {});
    cache.x[0] = std::move(streams);
    cache.zhat.assign(L, std::vector<std::vector<double>>(S));
    cache.act.assign(L, std::vector<std::vector<double>>(S));
    cache.argmax.assign(L, {});
    cache.inv_std.assign(L, {});
    if (batch_mean) batch_mean->assign(lo.stat_total, 0.0);
    if (batch_var) batch_var->assign(lo.stat_total, 0.0);

    for (int l = 0; l < L; ++l) {
        const Size out = lo.sizes[l + 1];
        const int cout = lo.enc_out[l];
        const int area = out.area();
        const std::size_t n = static_cast<std::size_t>(cout) * area;
        for (int s = 0; s < S; ++s) {
            cache.zhat[l][s].resize(n);
            conv_forward(cache.x[l][s].data(), lo.enc_in[l], lo.sizes[l], P.data() + lo.enc_w[l], cout, out,
                         cache.zhat[l][s].data());
        }
        // normalization per channel over streams x spatial
        cache.inv_std[l].resize(cout);
        const double count = static_cast<double>(S) * area;
        for (int c = 0; c < cout; ++c) {
            double mean = 0.0, var = 0.0;
            if (mean_in) {
                mean = (*mean_in)[lo.stat[l] + c];
                var = (*var_in)[lo.stat[l] + c];
            } else {
                for (int s = 0; s < S; ++s) {
                    for (int i = 0; i < area; ++i) mean += cache.zhat[l][s][static_cast<std::size_t>(i) * cout + c];
                }
                mean /= count;
                for (int s = 0; s < S; ++s) {
                    for (int i = 0; i < area; ++i) {
                        const double d = cache.zhat[l][s][static_cast<std::size_t>(i) * cout + c] - mean;
                        var += d * d;
                    }
                }
                var /= count;
            }
            if (batch_mean) (*batch_mean)[lo.stat[l] + c] = mean;
            if (batch_var) (*batch_var)[lo.stat[l] + c] = var;
            const double inv = 1.0 / std::sqrt(var + kBnEpsilon);
            cache.inv_std[l][c] = inv;
            const double gamma = P[lo.enc_gamma[l] + c], beta = P[lo.enc_beta[l] + c];
            for (int s = 0; s < S; ++s) {
                auto& z = cache.zhat[l][s];
                auto& a = cache.act[l][s];
                a.resize(n);
                for (int i = 0; i < area; ++i) {
                    const std::size_t e = static_cast<std::size_t>(i) * cout + c;
                    z[e] = (z[e] - mean) * inv;
                    a[e] = std::max(0.0, gamma * z[e] + beta);
                }
            }
        }
        // max over the 18 parts of each atlas, concatenated back onto each part
        cache.argmax[l].assign(static_cast<std::size_t>(atlases) * n, 0);
        cache.x[l + 1].assign(S, {});
        for (int a = 0; a < atlases; ++a) {
            std::vector<double> agg(n, -std::numeric_limits<double>::infinity());
            int* arg = cache.argmax[l].data() + static_cast<std::size_t>(a) * n;
            for (int p = 0; p < kPartCount; ++p) {
                const int s = a * kPartCount + p;
                for (std::size_t i = 0; i < n; ++i) {
                    if (cache.act[l][s][i] > agg[i]) {
                        agg[i] = cache.act[l][s][i];
                        arg[i] = s;
                    }
                }
            }
            for (int p = 0; p < kPartCount; ++p) {
                const int s = a * kPartCount + p;
                auto& next = cache.x[l + 1][s];
                next.resize(2 * n);
                for (int i = 0; i < area; ++i) {
                    const std::size_t src = static_cast<std::size_t>(i) * cout;
                    std::copy_n(cache.act[l][s].data() + src, cout, next.data() + 2 * src);
                    std::copy_n(agg.data() + src, cout, next.data() + 2 * src + cout);
                }
            }
        }
    }

    cache.dec.assign(S, {});
    for (int s = 0; s < S; ++s) {
        const int p = s % kPartCount;
        auto& dec = cache.dec[s];
        dec.assign(L + 1, {});
        dec[0] = cache.x[L][s];
        for (int d = 0; d < L; ++d) {
            const Size in = lo.sizes[L - d], out = lo.sizes[L - 1 - d];
            dec[d + 1].resize(static_cast<std::size_t>(lo.dec_ch[d + 1]) * out.area());
            deconv_forward(dec[d].data(), lo.dec_ch[d], in, P.data() + lo.dec_w[p][d], P.data() + lo.dec_b[p][d],
                           lo.dec_ch[d + 1], out, dec[d + 1].data());
            if (d + 1 < L) {
                for (double& v : dec[d + 1]) v = std::max(0.0, v);
            }
        }
    }
}

std::vector<std::vector<double>> to_streams(const GraphInpaintNet::Input& input) {
    return {input.begin(), input.end()};
}

}  // namespace

GraphInpaintNet::Trace GraphInpaintNet::forward(const Input& input) const {
    const Layout lo = layout();
    Cache cache;
    const bool fixed = calibrated();
    run_forward(*this, lo, to_streams(input), cache, fixed ? &norm_mean_ : nullptr, fixed ? &norm_var_ : nullptr);
    Trace t;
    t.encoder.assign(cache.x.begin() + 1, cache.x.end());
    for (int p = 0; p < kPartCount; ++p) t.output[p] = std::move(cache.dec[p].back());
    return t;
}

double GraphInpaintNet::loss(std::span<const TextureAtlas> atlases, std::span<const std::array<bool, kPartCount>> hidden,
                             std::vector<double>* grad) const {
    if (atlases.empty() || atlases.size() != hidden.size()) {
        throw Error(ErrorCode::length_mismatch, "need one hidden-part set per atlas");
    }
    const Layout lo = layout();
    std::vector<std::vector<double>> streams;
    for (std::size_t a = 0; a < atlases.size(); ++a) {
        Input in = make_input(atlases[a], hidden[a]);
        for (auto& v : in) streams.push_back(std::move(v));
    }
    Cache cache;
    run_forward(*this, lo, std::move(streams), cache, nullptr, nullptr);
    const int S = cache.streams;

    const int w = shape_.patch_width, h = shape_.patch_height, area = w * h;
    const int L = levels();
    std::size_t count = 0;
    for (std::size_t a = 0; a < atlases.size(); ++a) {
        for (int p = 0; p < kPartCount; ++p) {
            if (!hidden[a][p]) continue;
            const CellRect cell = atlases[a].cell(p + 1);
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) count += atlases[a].valid[atlases[a].index(cell.x0 + x, cell.y0 + y)] ? 3 : 0;
            }
        }
    }
    if (grad) grad->assign(lo.total, 0.0);
    if (count == 0) return 0.0;
    const double scale = 1.0 / static_cast<double>(count);

    double total = 0.0;
    std::vector<std::vector<double>> dout(S);
    for (int s = 0; s < S; ++s) {
        const std::size_t a = static_cast<std::size_t>(s / kPartCount);
        const int p = s % kPartCount;
        dout[s].assign(static_cast<std::size_t>(3) * area, 0.0);
        if (!hidden[a][p]) continue;
        const TextureAtlas& atlas = atlases[a];
        const CellRect cell = atlas.cell(p + 1);
        const auto& out = cache.dec[s].back();
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const std::size_t t = atlas.index(cell.x0 + x, cell.y0 + y);
                if (!atlas.valid[t]) continue;
                for (int ch = 0; ch < 3; ++ch) {
                    const std::size_t o = static_cast<std::size_t>(y * w + x) * 3 + ch;
                    const double d = out[o] - atlas.color[t][ch] / 255.0;
                    total += smooth_l1_scalar(d);
                    dout[s][o] = smooth_l1_grad(d) * scale;
                }
            }
        }
    }
    const double value = total * scale;
    if (!grad) return value;

    std::vector<double>& G = *grad;
    const std::vector<double>& P = params_;
    // decoders
    std::vector<std::vector<double>> dx(S);
    for (int s = 0; s < S; ++s) {
        const int p = s % kPartCount;
        if (!hidden[static_cast<std::size_t>(s / kPartCount)][p]) {  // no loss terms, zero gradient
            dx[s].assign(cache.x[L][s].size(), 0.0);
            continue;
        }
        std::vector<double> dy = std::move(dout[s]);
        for (int d = L - 1; d >= 0; --d) {
            const Size in = lo.sizes[L - d], out = lo.sizes[L - 1 - d];
            const auto& xin = cache.dec[s][d];
            std::vector<double> dxin(xin.size(), 0.0);
            deconv_backward(xin.data(), lo.dec_ch[d], in, P.data() + lo.dec_w[p][d], lo.dec_ch[d + 1], out, dy.data(),
                            G.data() + lo.dec_w[p][d], G.data() + lo.dec_b[p][d], dxin.data());
            if (d > 0) {
                for (std::size_t i = 0; i < dxin.size(); ++i) {
                    if (xin[i] <= 0.0) dxin[i] = 0.0;  // ReLU between decoder layers
                }
            }
            dy = std::move(dxin);
        }
        dx[s] = std::move(dy);
    }
    // encoder, top level down
    const int n_atlases = S / kPartCount;
    for (int l = L - 1; l >= 0; --l) {
        const Size out = lo.sizes[l + 1];
        const int area_l = out.area();
        const int cout = lo.enc_out[l];
        const std::size_t n = static_cast<std::size_t>(cout) * area_l;
        std::vector<std::vector<double>> da(S, std::vector<double>(n));
        std::vector<std::vector<double>> dagg_part(S, std::vector<double>(n));
        for (int s = 0; s < S; ++s) {
            for (int i = 0; i < area_l; ++i) {
                const std::size_t src = static_cast<std::size_t>(i) * cout;
                std::copy_n(dx[s].data() + 2 * src, cout, da[s].data() + src);
                std::copy_n(dx[s].data() + 2 * src + cout, cout, dagg_part[s].data() + src);
            }
        }
        for (int a = 0; a < n_atlases; ++a) {
            const int* arg = cache.argmax[l].data() + static_cast<std::size_t>(a) * n;
            for (std::size_t i = 0; i < n; ++i) {
                double dagg = 0.0;
                for (int p = 0; p < kPartCount; ++p) dagg += dagg_part[a * kPartCount + p][i];
                da[arg[i]][i] += dagg;
            }
        }
        // ReLU and batch normalization
        const double count_bn = static_cast<double>(S) * area_l;
        std::vector<std::vector<double>> dz(S, std::vector<double>(n, 0.0));
        for (int c = 0; c < cout; ++c) {
            const double gamma = P[lo.enc_gamma[l] + c];
            double sum_dzhat = 0.0, sum_dzhat_zhat = 0.0, dgamma = 0.0, dbeta = 0.0;
            for (int s = 0; s < S; ++s) {
                for (int i = 0; i < area_l; ++i) {
                    const std::size_t e = static_cast<std::size_t>(i) * cout + c;
                    const double g = cache.act[l][s][e] > 0.0 ? da[s][e] : 0.0;
                    const double zh = cache.zhat[l][s][e];
                    dgamma += g * zh;
                    dbeta += g;
                    da[s][e] = g * gamma;  // now d zhat
                    sum_dzhat += g * gamma;
                    sum_dzhat_zhat += g * gamma * zh;
                }
            }
            G[lo.enc_gamma[l] + c] += dgamma;
            G[lo.enc_beta[l] + c] += dbeta;
            const double inv = cache.inv_std[l][c];
            for (int s = 0; s < S; ++s) {
                for (int i = 0; i < area_l; ++i) {
                    const std::size_t e = static_cast<std::size_t>(i) * cout + c;
                    const double zh = cache.zhat[l][s][e];
                    dz[s][e] = inv / count_bn * (count_bn * da[s][e] - sum_dzhat - zh * sum_dzhat_zhat);
                }
            }
        }
        for (int s = 0; s < S; ++s) {
            std::vector<double> dxin;
            if (l > 0) dxin.assign(cache.x[l][s].size(), 0.0);
            conv_backward(cache.x[l][s].data(), lo.enc_in[l], lo.sizes[l], P.data() + lo.enc_w[l], cout, out,
                          dz[s].data(), G.data() + lo.enc_w[l], l > 0 ? dxin.data() : nullptr);
            dx[s] = std::move(dxin);
        }
    }
    return value;
}

double GraphInpaintNet::loss(const TextureAtlas& atlas, const std::array<bool, kPartCount>& hidden,
                             std::vector<double>* grad) const {
    return loss(std::span<const TextureAtlas>(&atlas, 1), std::span<const std::array<bool, kPartCount>>(&hidden, 1),
                grad);
}

void GraphInpaintNet::calibrate(std::span<const TextureAtlas> atlases,
                                std::span<const std::array<bool, kPartCount>> hidden) {
    if (atlases.empty() || atlases.size() != hidden.size()) {
        throw Error(ErrorCode::length_mismatch, "need one hidden-part set per atlas");
    }
    const Layout lo = layout();
    std::vector<std::vector<double>> streams;
    for (std::size_t a = 0; a < atlases.size(); ++a) {
        Input in = make_input(atlases[a], hidden[a]);
        for (auto& v : in) streams.push_back(std::move(v));
    }
    Cache cache;
    std::vector<double> mean, var;
    run_forward(*this, lo, std::move(streams), cache, nullptr, nullptr, &mean, &var);
    norm_mean_ = std::move(mean);
    norm_var_ = std::move(var);
}

void GraphInpaintNet::clear_calibration() {
    norm_mean_.clear();
    norm_var_.clear();
}

GraphInpaintNet::Trace graph_forward(const GraphInpaintNet& net, const TextureAtlas& atlas) {
    return net.forward(net.make_input(atlas));
}

std::array<bool, kPartCount> draw_hidden_parts(const TextureAtlas& atlas, std::mt19937_64& rng) {
    std::vector<int> present;
    for (int p = 1; p <= kPartCount; ++p) {
        const CellRect c = atlas.cell(p);
        bool any = false;
        for (int y = c.y0; y < c.y0 + c.height && !any; ++y) {
            for (int x = c.x0; x < c.x0 + c.width && !any; ++x) any = atlas.valid[atlas.index(x, y)] != 0;
        }
        if (any) present.push_back(p);
    }
    if (present.size() < 2) {
        throw Error(ErrorCode::insufficient_valid_parts,
                    "training needs at least 2 parts with valid texels, found " + std::to_string(present.size()));
    }
    const std::uint64_t full = (std::uint64_t{1} << present.size()) - 1;
    std::uint64_t bits = 0;
    do {
        bits = rng() & full;
    } while (bits == 0 || bits == full);
    std::array<bool, kPartCount> hidden{};
    for (std::size_t i = 0; i < present.size(); ++i) hidden[present[i] - 1] = (bits >> i) & 1;
    return hidden;
}

double train_step(GraphInpaintNet& net, std::span<const TextureAtlas> atlases,
                  std::span<const std::array<bool, kPartCount>> hidden, const TrainOptions& options) {
    std::vector<double> grad;
    const double value = net.loss(atlases, hidden, &grad);
    auto& P = net.parameters();
    if (options.learning_rate != 0.0) {
        for (std::size_t i = 0; i < P.size(); ++i) P[i] -= options.learning_rate * grad[i];
    }
    return value;
}

double train_step(GraphInpaintNet& net, std::span<const TextureAtlas> atlases, std::mt19937_64& rng,
                  const TrainOptions& options) {
    std::vector<std::array<bool, kPartCount>> hidden;
    for (const TextureAtlas& a : atlases) hidden.push_back(draw_hidden_parts(a, rng));
    return train_step(net, atlases, hidden, options);
}

double train_step(GraphInpaintNet& net, const TextureAtlas& atlas, std::mt19937_64& rng, const TrainOptions& options) {
    return train_step(net, std::span<const TextureAtlas>(&atlas, 1), rng, options);
}

double train_step(GraphInpaintNet& net, const TextureAtlas& atlas, const std::array<bool, kPartCount>& hidden,
                  const TrainOptions& options) {
    return train_step(net, std::span<const TextureAtlas>(&atlas, 1),
                      std::span<const std::array<bool, kPartCount>>(&hidden, 1), options);
}

void calibrate_normalization(GraphInpaintNet& net, std::span<const TextureAtlas> atlases, std::mt19937_64& rng) {
    std::vector<std::array<bool, kPartCount>> hidden;
    for (const TextureAtlas& a : atlases) hidden.push_back(draw_hidden_parts(a, rng));
    net.calibrate(atlases, hidden);
}

AdamOptimizer::AdamOptimizer(double learning_rate, double beta1, double beta2, double epsilon)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {}

void AdamOptimizer::apply(std::vector<double>& params, const std::vector<double>& grad) {
    if (grad.size() != params.size()) throw Error(ErrorCode::length_mismatch, "gradient size differs from parameters");
    if (m_.size() != params.size()) {
        m_.assign(params.size(), 0.0);
        v_.assign(params.size(), 0.0);
        step_ = 0;
    }
    ++step_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
        params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
}

double adam_step(GraphInpaintNet& net, std::span<const TextureAtlas> atlases, std::mt19937_64& rng,
                 AdamOptimizer& optimizer) {
    std::vector<std::array<bool, kPartCount>> hidden;
    for (const TextureAtlas& a : atlases) hidden.push_back(draw_hidden_parts(a, rng));
    std::vector<double> grad;
    const double value = net.loss(atlases, hidden, &grad);
    optimizer.apply(net.parameters(), grad);
    return value;
}

InpaintTrainResult train_inpaint_net(const InpaintBenchmarkConfig& cfg) {
    if (cfg.steps <= 0 || cfg.batch <= 0 || cfg.train_atlases <= 0 || cfg.test_atlases <= 0 || cfg.hidden_parts <= 0 ||
        cfg.hidden_parts >= kPartCount) {
        throw Error(ErrorCode::invalid_argument, "invalid inpainting benchmark configuration");
    }
    // training and test atlases come from disjoint seed ranges
    std::vector<TextureAtlas> train;
    for (int i = 0; i < cfg.train_atlases; ++i) {
        train.push_back(make_procedural_atlas(cfg.resolution, cfg.seed * 1000003 + 1000 + static_cast<std::uint64_t>(i)));
    }
    InpaintTrainResult result{GraphInpaintNet::for_resolution(cfg.resolution, cfg.seed), 0.0, 0.0};
    AdamOptimizer adam(cfg.learning_rate);
    std::mt19937_64 rng(cfg.seed);
    const int window = std::max(1, cfg.steps / 10);
    std::vector<TextureAtlas> batch;
    for (int step = 0; step < cfg.steps; ++step) {
        batch.clear();
        for (int b = 0; b < cfg.batch; ++b) {
            batch.push_back(train[static_cast<std::size_t>((step * cfg.batch + b) % cfg.train_atlases)]);
        }
        const double l = adam_step(result.net, batch, rng, adam);
        if (step < window) result.first_loss += l / window;
        if (step >= cfg.steps - window) result.last_loss += l / window;
    }
    calibrate_normalization(result.net, train, rng);
    return result;
}

InpaintBenchmarkResult run_inpaint_benchmark(const InpaintBenchmarkConfig& cfg) {
    InpaintTrainResult trained = train_inpaint_net(cfg);
    const GraphInpaintNet& net = trained.net;
    InpaintBenchmarkResult result;
    result.first_loss = trained.first_loss;
    result.last_loss = trained.last_loss;

    std::mt19937_64 pick(cfg.seed + 7);
    double net_err = 0.0, pure_err = 0.0, knn_err = 0.0;
    std::size_t n = 0;
    for (int t = 0; t < cfg.test_atlases; ++t) {
        const TextureAtlas truth = make_procedural_atlas(cfg.resolution, cfg.seed * 1000003 + static_cast<std::uint64_t>(t));
        std::array<bool, kPartCount> hidden{};
        for (int c = 0; c < cfg.hidden_parts;) {
            const auto p = static_cast<std::size_t>(pick() % kPartCount);
            if (!hidden[p]) {
                hidden[p] = true;
                ++c;
            }
        }
        TextureAtlas masked = truth;
        for (int y = 0; y < truth.resolution; ++y) {
            for (int x = 0; x < truth.resolution; ++x) {
                if (hidden[truth.part_of(x, y) - 1]) masked.valid[truth.index(x, y)] = 0;
            }
        }
        const TextureAtlas by_net = inpaint_with_net(net, masked);
        const TextureAtlas by_pure = fill_pure_color(masked);
        const TextureAtlas by_knn = fill_knn(masked, cfg.knn_k);
        for (std::size_t i = 0; i < truth.texel_count(); ++i) {
            if (masked.valid[i]) continue;
            for (int ch = 0; ch < 3; ++ch) {
                const int want = truth.color[i][ch];
                net_err += std::abs(by_net.color[i][ch] - want);
                pure_err += std::abs(by_pure.color[i][ch] - want);
                knn_err += std::abs(by_knn.color[i][ch] - want);
                ++n;
            }
        }
    }
    result.net_mae = net_err / static_cast<double>(n);
    result.pure_color_mae = pure_err / static_cast<double>(n);
    result.knn_mae = knn_err / static_cast<double>(n);
    return result;
}

TextureAtlas inpaint_with_net(const GraphInpaintNet& net, const TextureAtlas& atlas) {
    TextureAtlas out = atlas;
    if (atlas.complete()) return out;
    const GraphInpaintNet::Trace t = graph_forward(net, atlas);
    const int w = net.shape().patch_width, h = net.shape().patch_height;
    for (int p = 0; p < kPartCount; ++p) {
        const CellRect cell = atlas.cell(p + 1);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const std::size_t i = atlas.index(cell.x0 + x, cell.y0 + y);
                if (atlas.valid[i]) continue;
                for (int ch = 0; ch < 3; ++ch) {
                    out.color[i][ch] = to_u8(255.0 * t.output[p][static_cast<std::size_t>(y * w + x) * 3 + ch]);
                }
            }
        }
    }
    std::fill(out.valid.begin(), out.valid.end(), std::uint8_t{1});
    return out;
}

// ---------------------------------------------------------------------------
// Serialization: "CVISGNET", u32 version, u32 patch w, u32 patch h, u32 levels,
// u32 widths[levels], u64 parameter count, f64 parameters, u64 statistics count
// (0 when uncalibrated), f64 means, f64 variances. Little endian.

namespace {

constexpr char kNetMagic[8] = {'C', 'V', 'I', 'S', 'G', 'N', 'E', 'T'};
constexpr std::uint32_t kNetVersion = 1;
static_assert(std::endian::native == std::endian::little, "serialization assumes a little-endian host");

template <typename T>
void put(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::filesystem::path& path) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
        throw Error(ErrorCode::parse_error, path.string() + ": truncated network file");
    }
    return v;
}

}  // namespace

void GraphInpaintNet::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string());
    out.write(kNetMagic, sizeof(kNetMagic));
    put<std::uint32_t>(out, kNetVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(shape_.patch_width));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(shape_.patch_height));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(shape_.widths.size()));
    for (int w : shape_.widths) put<std::uint32_t>(out, static_cast<std::uint32_t>(w));
    put<std::uint64_t>(out, params_.size());
    out.write(reinterpret_cast<const char*>(params_.data()), static_cast<std::streamsize>(params_.size() * sizeof(double)));
    put<std::uint64_t>(out, norm_mean_.size());
    out.write(reinterpret_cast<const char*>(norm_mean_.data()), static_cast<std::streamsize>(norm_mean_.size() * sizeof(double)));
    out.write(reinterpret_cast<const char*>(norm_var_.data()), static_cast<std::streamsize>(norm_var_.size() * sizeof(double)));
    if (!out) throw Error(ErrorCode::io_error, "failed writing " + path.string());
}

GraphInpaintNet GraphInpaintNet::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::io_error, "cannot open " + path.string());
    char magic[8];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kNetMagic, sizeof(magic)) != 0) {
        throw Error(ErrorCode::parse_error, path.string() + ": not a network file");
    }
    const auto version = get<std::uint32_t>(in, path);
    if (version != kNetVersion) {
        throw Error(ErrorCode::schema_version_mismatch,
                    path.string() + ": network file version " + std::to_string(version) + ", expected 1");
    }
    Shape shape;
    shape.patch_width = static_cast<int>(get<std::uint32_t>(in, path));
    shape.patch_height = static_cast<int>(get<std::uint32_t>(in, path));
    const auto levels = get<std::uint32_t>(in, path);
    if (levels == 0 || levels > 16) throw Error(ErrorCode::parse_error, path.string() + ": bad level count");
    shape.widths.clear();
    for (std::uint32_t l = 0; l < levels; ++l) shape.widths.push_back(static_cast<int>(get<std::uint32_t>(in, path)));
    GraphInpaintNet net(shape, 0);
    const auto count = get<std::uint64_t>(in, path);
    if (count != net.params_.size()) throw Error(ErrorCode::parse_error, path.string() + ": parameter count mismatch");
    if (!in.read(reinterpret_cast<char*>(net.params_.data()), static_cast<std::streamsize>(count * sizeof(double)))) {
        throw Error(ErrorCode::parse_error, path.string() + ": truncated network file");
    }
    const auto stats = get<std::uint64_t>(in, path);
    if (stats != 0 && stats != net.layout().stat_total) {
        throw Error(ErrorCode::parse_error, path.string() + ": statistics count mismatch");
    }
    net.norm_mean_.resize(stats);
    net.norm_var_.resize(stats);
    const auto bytes = static_cast<std::streamsize>(stats * sizeof(double));
    if (!in.read(reinterpret_cast<char*>(net.norm_mean_.data()), bytes) ||
        !in.read(reinterpret_cast<char*>(net.norm_var_.data()), bytes)) {
        throw Error(ErrorCode::parse_error, path.string() + ": truncated network file");
    }
    for (const auto* block : {&net.params_, &net.norm_mean_, &net.norm_var_}) {
        for (double v : *block) {
            if (!std::isfinite(v)) throw Error(ErrorCode::parse_error, path.string() + ": non-finite value");
        }
    }
    return net;
}

}  // namespace cvis
