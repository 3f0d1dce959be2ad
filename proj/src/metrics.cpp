#include "tadsr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "tadsr/error.hpp"
#include "tadsr/imaging.hpp"
#include "tadsr/train.hpp"

namespace tadsr {

double psnr(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "psnr");
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        s += d * d;
    }
    const double mse = s / static_cast<double>(a.numel());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

double psnr_serialized(double db) noexcept { return std::isinf(db) ? kPsnrSentinel : db; }

double ssim(const Tensor& a, const Tensor& b, int window, double sigma) {
    require_same_shape(a, b, "ssim");
    if (a.rank() != 3) throw ShapeError("ssim: expected C x H x W");
    if (window < 1 || window % 2 == 0) throw ParameterError("ssim: window must be odd");
    const int c = a.dim(0), h = a.dim(1), w = a.dim(2);
    if (h < window || w < window) {
        throw ShapeError("ssim: image " + shape_to_string(a.shape()) + " smaller than the " + std::to_string(window) +
                         "x" + std::to_string(window) + " window");
    }
    std::vector<double> g(static_cast<std::size_t>(window) * window);
    {
        const int r = window / 2;
        double total = 0.0;
        for (int i = 0; i < window; ++i) {
            for (int j = 0; j < window; ++j) {
                const double v = std::exp(-((i - r) * (i - r) + (j - r) * (j - r)) / (2.0 * sigma * sigma));
                g[static_cast<std::size_t>(i) * window + j] = v;
                total += v;
            }
        }
        for (double& v : g) v /= total;
    }
    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double acc = 0.0;
    for (int ch = 0; ch < c; ++ch) {
        const float* pa = a.data() + static_cast<std::size_t>(ch) * h * w;
        const float* pb = b.data() + static_cast<std::size_t>(ch) * h * w;
        double sum = 0.0;
        int count = 0;
        for (int y = 0; y + window <= h; ++y) {
            for (int x = 0; x + window <= w; ++x) {
                double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
                for (int i = 0; i < window; ++i) {
                    for (int j = 0; j < window; ++j) {
                        const double k = g[static_cast<std::size_t>(i) * window + j];
                        const double va = pa[(y + i) * w + x + j], vb = pb[(y + i) * w + x + j];
                        ma += k * va;
                        mb += k * vb;
                        saa += k * va * va;
                        sbb += k * vb * vb;
                        sab += k * va * vb;
                    }
                }
                const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
                sum += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++count;
            }
        }
        acc += sum / count;
    }
    return acc / c;
}

double hf_energy(const Tensor& x) {
    if (x.rank() != 3) throw ShapeError("hf_energy: expected C x H x W");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (h < 3 || w < 3) throw ShapeError("hf_energy: image smaller than 3x3");
    double s = 0.0;
    for (int ch = 0; ch < c; ++ch) {
        const float* p = x.data() + static_cast<std::size_t>(ch) * h * w;
        for (int y = 1; y < h - 1; ++y) {
            for (int xx = 1; xx < w - 1; ++xx) {
                const double l = static_cast<double>(p[(y - 1) * w + xx]) + p[(y + 1) * w + xx] + p[y * w + xx - 1] +
                                 p[y * w + xx + 1] - 4.0 * p[y * w + xx];
                s += l * l;
            }
        }
    }
    return s / (static_cast<double>(c) * (h - 2) * (w - 2));
}

namespace {

std::vector<double> ranks(std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    return r;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw ShapeError("spearman: length mismatch");
    if (x.size() < 2) throw ParameterError("spearman: need at least two points");
    const auto rx = ranks(x), ry = ranks(y);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

namespace {

EvalRow score(std::string label, const std::vector<Tensor>& outputs, const std::vector<ImagePair>& pairs) {
    EvalRow row{std::move(label), 0.0, 0.0, 0.0, static_cast<int>(pairs.size())};
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        row.psnr_mean += psnr_serialized(psnr(outputs[i], pairs[i].hq));
        row.ssim_mean += ssim(outputs[i], pairs[i].hq);
        row.hf_energy_mean += hf_energy(outputs[i]);
    }
    const double n = static_cast<double>(pairs.size());
    row.psnr_mean /= n;
    row.ssim_mean /= n;
    row.hf_energy_mean /= n;
    return row;
}

}  // namespace

EvalReport sweep_ts(const StudentModel& model, const std::vector<ImagePair>& pairs, const std::vector<int>& ts) {
    if (pairs.empty()) throw ParameterError("sweep_ts: empty evaluation set");
    if (ts.empty()) throw ParameterError("sweep_ts: no t_s values");
    EvalReport r;
    r.ts = ts;
    std::vector<double> tsd, ps, hf;
    for (int t : ts) {
        std::vector<Tensor> out;
        for (const auto& p : pairs) out.push_back(super_resolve(model, p.lq, t));
        r.rows.push_back(score(std::to_string(t), out, pairs));
        tsd.push_back(t);
        ps.push_back(r.rows.back().psnr_mean);
        hf.push_back(r.rows.back().hf_energy_mean);
    }
    std::vector<Tensor> bilinear, identity;
    for (const auto& p : pairs) {
        bilinear.push_back(clamp01(upsample_lq(p.lq, model.scale)));
        identity.push_back(p.hq);
    }
    r.rows.push_back(score("baseline_bilinear", bilinear, pairs));
    r.rows.push_back(score("baseline_identity", identity, pairs));
    if (ts.size() >= 2) {
        r.spearman_psnr = spearman(tsd, ps);
        r.spearman_hf = spearman(tsd, hf);
    }
    return r;
}

void write_csv(const std::filesystem::path& path, const EvalReport& report) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "ts,psnr,ssim,hf_energy,n\n";
    char buf[256];
    for (const auto& row : report.rows) {
        std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.8f,%d\n", row.label.c_str(), row.psnr_mean, row.ssim_mean,
                      row.hf_energy_mean, row.n);
        out << buf;
    }
}

std::string trend_summary(const EvalReport& report) {
    std::ostringstream s;
    s << "spearman(ts, psnr) = " << report.spearman_psnr << '\n';
    s << "spearman(ts, hf_energy) = " << report.spearman_hf << '\n';
    return s.str();
}

}  // namespace tadsr
