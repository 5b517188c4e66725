#include "petsgm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <stdexcept>

#include "petsgm/likelihood.hpp"
#include "petsgm/rng.hpp"

namespace petsgm {

namespace {

constexpr double kPsnrCap = 200.0;

double image_max(const ImageGrid& a, const char* who) {
    if (a.v.empty()) throw std::invalid_argument(std::string(who) + ": empty image");
    return *std::max_element(a.v.begin(), a.v.end());
}

double mask_mean(const ImageGrid& a, const std::vector<std::uint8_t>& mask, const char* who) {
    if (mask.size() != a.v.size())
        throw std::invalid_argument(std::string(who) + ": mask size does not match image");
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) { s += a.v[i]; ++n; }
    if (n == 0) throw std::invalid_argument(std::string(who) + ": empty mask");
    return s / static_cast<double>(n);
}

std::string fmt_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return std::string(buf);
}

} // namespace

double psnr(const ImageGrid& xhat, const ImageGrid& x_true) {
    require_same_shape(xhat, x_true, "psnr");
    const double peak = image_max(x_true, "psnr");
    if (!(peak > 0.0)) throw std::invalid_argument("psnr: ground truth has zero dynamic range");
    double mse = 0.0;
    for (std::size_t i = 0; i < xhat.v.size(); ++i) {
        const double d = xhat.v[i] - x_true.v[i];
        mse += d * d;
    }
    mse /= static_cast<double>(xhat.v.size());
    if (mse <= 0.0) return kPsnrCap;
    const double val = 10.0 * std::log10(peak * peak / mse);
    return std::min(val, kPsnrCap);
}

double ssim(const ImageGrid& xhat, const ImageGrid& x_true) {
    require_same_shape(xhat, x_true, "ssim");
    constexpr int W = 7;
    if (xhat.nx < W || xhat.ny < W)
        throw std::invalid_argument("ssim: image smaller than the 7x7 window");
    const double L = image_max(x_true, "ssim");
    if (!(L > 0.0)) throw std::invalid_argument("ssim: ground truth has zero dynamic range");
    const double c1 = (0.01 * L) * (0.01 * L);
    const double c2 = (0.03 * L) * (0.03 * L);
    const double n = static_cast<double>(W * W);
    double total = 0.0;
    long windows = 0;
    for (int z = 0; z < xhat.nz; ++z) {
        for (int y0 = 0; y0 + W <= xhat.ny; ++y0) {
            for (int x0 = 0; x0 + W <= xhat.nx; ++x0) {
                double sa = 0.0, sb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
                for (int dy = 0; dy < W; ++dy) {
                    for (int dx = 0; dx < W; ++dx) {
                        const double a = xhat(x0 + dx, y0 + dy, z);
                        const double b = x_true(x0 + dx, y0 + dy, z);
                        sa += a;
                        sb += b;
                        saa += a * a;
                        sbb += b * b;
                        sab += a * b;
                    }
                }
                const double mua = sa / n;
                const double mub = sb / n;
                const double va = (saa - n * mua * mua) / (n - 1.0);
                const double vb = (sbb - n * mub * mub) / (n - 1.0);
                const double cab = (sab - n * mua * mub) / (n - 1.0);
                total += ((2.0 * mua * mub + c1) * (2.0 * cab + c2)) /
                         ((mua * mua + mub * mub + c1) * (va + vb + c2));
                ++windows;
            }
        }
    }
    return total / static_cast<double>(windows);
}

RoiSet make_rois(const PairedSample& sample) {
    require_same_shape(sample.pet, sample.lesion_mask, "make_rois");
    const std::size_t n = sample.pet.size();
    RoiSet r;
    r.lesion.assign(n, 0);
    r.background.assign(n, 0);
    r.support.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const bool les = sample.lesion_mask.v[i] > 0.5;
        const bool emit = sample.pet.v[i] > 0.0;
        r.lesion[i] = les ? 1 : 0;
        r.support[i] = emit ? 1 : 0;
        r.background[i] = (emit && !les) ? 1 : 0;
    }
    return r;
}

double crc(const std::vector<ImageGrid>& recons, const ImageGrid& x_true, const RoiSet& rois) {
    if (recons.empty()) throw std::invalid_argument("crc: needs at least one reconstruction");
    const double lt = mask_mean(x_true, rois.lesion, "crc truth lesion");
    const double bt = mask_mean(x_true, rois.background, "crc truth background");
    if (bt == 0.0) throw std::invalid_argument("crc: truth background mean is zero");
    const double denom = lt / bt - 1.0;
    if (denom == 0.0) throw std::invalid_argument("crc: truth lesion/background contrast is 1");
    double acc = 0.0;
    for (const ImageGrid& r : recons) {
        require_same_shape(r, x_true, "crc");
        const double lr = mask_mean(r, rois.lesion, "crc lesion");
        const double br = mask_mean(r, rois.background, "crc background");
        if (br == 0.0) throw std::runtime_error("crc: reconstruction background mean is zero");
        acc += (lr / br - 1.0) / denom;
    }
    return acc / static_cast<double>(recons.size());
}

double ensemble_std(const std::vector<ImageGrid>& recons,
                    const std::vector<std::uint8_t>& background) {
    const std::size_t r_count = recons.size();
    if (r_count < 2) throw std::invalid_argument("ensemble_std: needs at least 2 realisations");
    for (const ImageGrid& r : recons) require_same_shape(r, recons.front(), "ensemble_std");
    if (background.size() != recons.front().v.size())
        throw std::invalid_argument("ensemble_std: mask size does not match images");
    double total = 0.0;
    std::size_t included = 0, excluded = 0;
    for (std::size_t k = 0; k < background.size(); ++k) {
        if (!background[k]) continue;
        double mean = 0.0;
        for (const ImageGrid& r : recons) mean += r.v[k];
        mean /= static_cast<double>(r_count);
        if (mean == 0.0) {
            ++excluded;
            continue;
        }
        double ss = 0.0;
        for (const ImageGrid& r : recons) {
            const double d = r.v[k] - mean;
            ss += d * d;
        }
        total += std::sqrt(ss / (mean * static_cast<double>(r_count - 1)));
        ++included;
    }
    if (excluded > 0)
        std::cerr << "ensemble_std: excluded " << excluded << " zero-mean background voxels\n";
    if (included == 0) throw std::runtime_error("ensemble_std: no usable background voxels");
    return total / static_cast<double>(included);
}

double kldiv(const Measurements& y, const ImageGrid& xhat, const SystemModel& sm) {
    for (double v : xhat.v)
        if (!(v >= 0.0)) throw std::invalid_argument("kldiv: reconstruction must be non-negative");
    const Measurements ybar = expected_counts(sm, xhat);
    return poisson_kldiv(ybar, y);
}

namespace {

bool is_sampler_algo(const std::string& algo) {
    return algo == "pet-naive" || algo == "pet-dps" || algo == "pet-dds";
}

ImageGrid reconstruct_cell(const SweepPlan& plan, const std::string& algo, double lambda,
                           std::uint64_t seed, const SystemModel& sm, const Measurements& y) {
    if (algo == "mlem") {
        ImageGrid init = sm.empty_image();
        std::fill(init.v.begin(), init.v.end(), 1.0);
        return mlem(y, sm, init, plan.n_iter);
    }
    if (algo == "osem") {
        const SubsetSchedule sched = partition_subsets(sm.geom, plan.n_sub);
        ImageGrid init = sm.empty_image();
        std::fill(init.v.begin(), init.v.end(), 1.0);
        return osem(y, sm, sched, init, plan.n_iter);
    }
    if (algo == "bsrem") {
        BsremParams params = plan.bsrem;
        params.lambda = lambda;
        return bsrem(y, sm, params, nullptr).x;
    }
    if (is_sampler_algo(algo)) {
        if (!plan.score || !plan.sched)
            throw std::invalid_argument("run_sweep: sampler algorithms need a score model and schedule");
        SamplerConfig cfg = plan.sampler;
        cfg.method = parse_sampler_method(algo);
        cfg.lambda = lambda;
        cfg.seed = seed;
        if (cfg.method == SamplerMethod::pet_dds)
            return reconstruct_pet_dds(y, sm, *plan.score, *plan.sched, cfg).image;
        return reconstruct_sde(y, sm, *plan.score, *plan.sched, cfg).image;
    }
    throw std::invalid_argument("run_sweep: unknown algorithm " + algo);
}

} // namespace

SweepResult run_sweep(const SweepPlan& plan, const SystemModel& sm, const ImageGrid& x_true,
                      const RoiSet& rois) {
    if (plan.algos.empty() || plan.lambdas.empty() || plan.seeds.empty())
        throw std::invalid_argument("run_sweep: algorithms, lambdas and seeds must be non-empty");
    for (const std::string& algo : plan.algos)
        if (is_sampler_algo(algo) && (!plan.score || !plan.sched))
            throw std::invalid_argument("run_sweep: sampler algorithms need a score model and schedule");
    const double qnan = std::numeric_limits<double>::quiet_NaN();

    std::vector<Measurements> ys;
    ys.reserve(plan.seeds.size());
    for (std::uint64_t seed : plan.seeds)
        ys.push_back(simulate_measurements(sm, x_true, RngStream::from_seed(seed).child("measurement")));

    SweepResult out;
    for (const std::string& algo : plan.algos) {
        for (std::size_t li = 0; li < plan.lambdas.size(); ++li) {
            const double lambda = plan.lambdas[li];
            const std::string group = algo + ":" + std::to_string(li);
            std::vector<ImageGrid> group_recons;
            SweepAggregate agg;
            agg.std_group_id = group;
            agg.algo = algo;
            agg.lambda = lambda;
            double s_psnr = 0.0, s_ssim = 0.0, s_crc = 0.0, s_kldiv = 0.0;
            for (std::size_t si = 0; si < plan.seeds.size(); ++si) {
                SweepRecord rec;
                rec.algo = algo;
                rec.lambda = lambda;
                rec.seed = plan.seeds[si];
                rec.std_group_id = group;
                try {
                    const ImageGrid xhat =
                        reconstruct_cell(plan, algo, lambda, plan.seeds[si], sm, ys[si]);
                    rec.psnr = psnr(xhat, x_true);
                    rec.ssim = ssim(xhat, x_true);
                    rec.crc = crc({xhat}, x_true, rois);
                    rec.kldiv = kldiv(ys[si], xhat, sm);
                    rec.ok = true;
                    group_recons.push_back(xhat);
                    s_psnr += rec.psnr;
                    s_ssim += rec.ssim;
                    s_crc += rec.crc;
                    s_kldiv += rec.kldiv;
                } catch (const std::exception& e) {
                    rec.ok = false;
                    rec.error = e.what();
                    rec.psnr = rec.ssim = rec.crc = rec.kldiv = qnan;
                }
                out.records.push_back(std::move(rec));
            }
            agg.r_ok = static_cast<int>(group_recons.size());
            if (agg.r_ok > 0) {
                agg.psnr_mean = s_psnr / agg.r_ok;
                agg.ssim_mean = s_ssim / agg.r_ok;
                agg.crc_mean = s_crc / agg.r_ok;
                agg.kldiv_mean = s_kldiv / agg.r_ok;
            } else {
                agg.psnr_mean = agg.ssim_mean = agg.crc_mean = agg.kldiv_mean = qnan;
            }
            if (group_recons.size() >= 2) {
                try {
                    agg.std_value = ensemble_std(group_recons, rois.background);
                } catch (const std::exception&) {
                    agg.std_value = qnan;
                }
            } else {
                agg.std_value = qnan;
            }
            out.aggregates.push_back(std::move(agg));
        }
    }
    return out;
}

std::string sweep_rows_csv(const SweepResult& res) {
    std::string out = "algo,lambda,seed,psnr,ssim,crc,kldiv,std_group_id\n";
    for (const SweepRecord& r : res.records) {
        out += r.algo;
        out += ',';
        out += fmt_g(r.lambda);
        out += ',';
        out += std::to_string(r.seed);
        out += ',';
        out += fmt_g(r.psnr);
        out += ',';
        out += fmt_g(r.ssim);
        out += ',';
        out += fmt_g(r.crc);
        out += ',';
        out += fmt_g(r.kldiv);
        out += ',';
        out += r.std_group_id;
        out += '\n';
    }
    return out;
}

std::string sweep_aggregates_csv(const SweepResult& res) {
    std::string out = "std_group_id,algo,lambda,r_ok,psnr_mean,ssim_mean,crc_mean,kldiv_mean,std\n";
    for (const SweepAggregate& a : res.aggregates) {
        out += a.std_group_id;
        out += ',';
        out += a.algo;
        out += ',';
        out += fmt_g(a.lambda);
        out += ',';
        out += std::to_string(a.r_ok);
        out += ',';
        out += fmt_g(a.psnr_mean);
        out += ',';
        out += fmt_g(a.ssim_mean);
        out += ',';
        out += fmt_g(a.crc_mean);
        out += ',';
        out += fmt_g(a.kldiv_mean);
        out += ',';
        out += fmt_g(a.std_value);
        out += '\n';
    }
    return out;
}

void write_sweep_csv(const SweepResult& res, const std::string& rows_path,
                     const std::string& aggregates_path) {
    std::ofstream rows(rows_path, std::ios::binary);
    if (!rows) throw std::runtime_error("write_sweep_csv: cannot open " + rows_path);
    rows << sweep_rows_csv(res);
    if (!rows.flush()) throw std::runtime_error("write_sweep_csv: write failed for " + rows_path);
    std::ofstream agg(aggregates_path, std::ios::binary);
    if (!agg) throw std::runtime_error("write_sweep_csv: cannot open " + aggregates_path);
    agg << sweep_aggregates_csv(res);
    if (!agg.flush()) throw std::runtime_error("write_sweep_csv: write failed for " + aggregates_path);
}

} // namespace petsgm
