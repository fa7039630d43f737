#include "pincwell/dataset.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

#include "pincwell/integrator.hpp"
#include "pincwell/io.hpp"

namespace pincwell {

namespace {

using nlohmann::json;

// Random-stream ids; a point's candidates depend only on (seed, split, index).
enum Split : uint64_t { kInit = 0, kColloc = 1, kVal = 2, kExplore = 3 };

}  // namespace

// ===== DomainBox / Scaler ====================================================

void DomainBox::validate() const {
    for (int i = 0; i < 3; ++i) {
        if (!(lo[i] < hi[i]) || !std::isfinite(lo[i]) || !std::isfinite(hi[i]))
            throw std::invalid_argument("DomainBox: lo must be finite and < hi per dimension");
    }
}

Scaler::Scaler(const DomainBox& box) : box_(box) { box.validate(); }

Vec3 Scaler::scale_state(const Vec3& x) const {
    // 2 (x-lo)/(hi-lo) - 1 maps both box corners to +-1 exactly
    return (2.0 * (x - box_.lo).array() / (box_.hi - box_.lo).array() - 1.0).matrix();
}

Vec3 Scaler::unscale_state(const Vec3& s) const {
    return (box_.lo.array() + (s.array() + 1.0) * 0.5 * (box_.hi - box_.lo).array()).matrix();
}

Vec6 Scaler::make_input(double t, const Vec3& x, const Vec2& u) const {
    Vec6 in;
    in[0] = scale_time(t);
    in.segment<3>(1) = scale_state(x);
    in.segment<2>(4) = scale_control(u);
    return in;
}

// ===== Exploration ===========================================================

ExplorationRanges load_exploration_ranges(const std::string& config_path) {
    std::ifstream in(config_path);
    if (!in) throw std::invalid_argument("cannot open well config: " + config_path);
    const json j = json::parse(in);
    ExplorationRanges r;
    if (j.contains("exploration")) {
        const json& e = j.at("exploration");
        if (e.contains("u1_min")) r.u1_min = e.at("u1_min").get<double>();
        if (e.contains("u1_max")) r.u1_max = e.at("u1_max").get<double>();
        if (e.contains("u2_min")) r.u2_min = e.at("u2_min").get<double>();
        if (e.contains("u2_max")) r.u2_max = e.at("u2_max").get<double>();
    }
    if (!(0.0 <= r.u1_min && r.u1_min < r.u1_max && r.u1_max <= 1.0) ||
        !(0.0 <= r.u2_min && r.u2_min < r.u2_max && r.u2_max <= 1.0))
        throw std::invalid_argument("exploration ranges must be nested in [0,1]");
    return r;
}

DomainBox explore_domain(const WellParameters& p, const ExplorationRanges& ranges,
                         int n_rollouts, uint64_t seed) {
    if (n_rollouts < 1) throw std::invalid_argument("explore_domain: n_rollouts >= 1");

    // stable, strongly lifted starting point shared by all rollouts
    const ControlInput u_start{0.5 * (ranges.u1_min + ranges.u1_max),
                               std::max(0.9, ranges.u2_min)};
    const WellState start = steady_state(p, u_start);

    Vec3 lo = start.as_vector(), hi = start.as_vector();
    auto absorb = [&lo, &hi](const Vec3& x) {
        lo = lo.cwiseMin(x);
        hi = hi.cwiseMax(x);
    };

    constexpr double kRolloutSeconds = 6000.0;
    constexpr double kBlockSeconds = 300.0;
    for (int r = 0; r < n_rollouts; ++r) {
        Rng rng = stream_rng(seed, kExplore, static_cast<uint64_t>(r));
        WellState x = start;
        ControlInput u{};
        for (int k = 0; k < static_cast<int>(kRolloutSeconds); ++k) {
            if (k % static_cast<int>(kBlockSeconds) == 0)
                u = {rng.uniform(ranges.u1_min, ranges.u1_max),
                     rng.uniform(ranges.u2_min, ranges.u2_max)};
            try {
                x = rk4_step(p, x, u, 1.0);
            } catch (const InfeasibleState&) {
                break;  // truncate this rollout where the model leaves its domain
            }
            if (!(x.m_G_an > 0.0 && x.m_G_tb > 0.0 && x.m_L_tb > 0.0)) break;
            absorb(x.as_vector());
        }
    }

    DomainBox box;
    Vec3 span = hi - lo;
    for (int i = 0; i < 3; ++i) {
        // guard against degenerate boxes (e.g. a single settled rollout)
        const double min_span = std::max(1.0, 0.01 * std::abs(0.5 * (lo[i] + hi[i])));
        if (span[i] < min_span) span[i] = min_span;
        const double mid = 0.5 * (lo[i] + hi[i]);
        box.lo[i] = mid - 0.55 * span[i];  // half-span + 5% inflation margin
        box.hi[i] = mid + 0.55 * span[i];
    }
    box.validate();
    return box;
}

// ===== Sampling ==============================================================

namespace {

struct Candidate {
    Vec3 x;
    Vec2 u;
};

Candidate draw_candidate(Rng& rng, const DomainBox& box) {
    Candidate c;
    for (int i = 0; i < 3; ++i) c.x[i] = rng.uniform(box.lo[i], box.hi[i]);
    c.u[0] = rng.uniform01();
    c.u[1] = rng.uniform01();
    return c;
}

/// Rejection-sampling bookkeeping shared by all splits.
class StallGuard {
public:
    void attempt() { ++attempts_; }
    void accept() { ++accepts_; }
    void check() const {
        constexpr int kWindow = 50000;
        if (attempts_ >= kWindow && static_cast<double>(accepts_) / attempts_ < 1e-3)
            throw RejectionStall("sample_dataset: acceptance rate below 0.1%");
    }

    long attempts() const { return attempts_; }
    long accepts() const { return accepts_; }

private:
    long attempts_ = 0, accepts_ = 0;
};

}  // namespace

PincDataset sample_dataset(const WellParameters& p, const DomainBox& box, int n_init,
                           int n_colloc, int n_val, uint64_t seed) {
    if (n_init < 1 || n_colloc < 1 || n_val < 1)
        throw std::invalid_argument("sample_dataset: all counts must be >= 1");
    box.validate();

    PincDataset ds;
    ds.scaler = Scaler(box);
    ds.init_inputs.resize(6, n_init);
    ds.init_targets.resize(3, n_init);
    ds.colloc_inputs.resize(6, n_colloc);
    ds.colloc_controls.resize(2, n_colloc);
    ds.val_inputs.resize(6, n_val);
    ds.val_targets.resize(3, n_val);

    StallGuard guard;
    auto accept_feasible = [&](Rng& rng) {
        for (;;) {
            guard.check();
            guard.attempt();
            const Candidate c = draw_candidate(rng, box);
            if (is_feasible(p, WellState::from_vector(c.x),
                            ControlInput::from_vector(c.u))) {
                guard.accept();
                return c;
            }
        }
    };

    for (int i = 0; i < n_init; ++i) {
        Rng rng = stream_rng(seed, kInit, static_cast<uint64_t>(i));
        const Candidate c = accept_feasible(rng);
        ds.init_inputs.col(i) = ds.scaler.make_input(0.0, c.x, c.u);
        ds.init_targets.col(i) = ds.scaler.scale_state(c.x);
    }

    for (int i = 0; i < n_colloc; ++i) {
        Rng rng = stream_rng(seed, kColloc, static_cast<uint64_t>(i));
        const Candidate c = accept_feasible(rng);
        const double t = rng.uniform(0.0, kStepSeconds);
        ds.colloc_inputs.col(i) = ds.scaler.make_input(t, c.x, c.u);
        ds.colloc_controls.col(i) = c.u;
    }

    for (int i = 0; i < n_val; ++i) {
        Rng rng = stream_rng(seed, kVal, static_cast<uint64_t>(i));
        for (;;) {
            const Candidate c = accept_feasible(rng);
            WellState end{};
            try {
                end = step_60s(p, WellState::from_vector(c.x), ControlInput::from_vector(c.u));
            } catch (const InfeasibleState&) {
                continue;  // candidate's 60 s rollout left the domain; redraw
            }
            if (!(end.m_G_an > 0.0 && end.m_G_tb > 0.0 && end.m_L_tb > 0.0)) continue;
            ds.val_inputs.col(i) = ds.scaler.make_input(kStepSeconds, c.x, c.u);
            ds.val_targets.col(i) = ds.scaler.scale_state(end.as_vector());
            break;
        }
    }

    return ds;
}

double measure_rejection_rate(const WellParameters& p, const DomainBox& box, int n,
                              uint64_t seed) {
    long attempts = 0, accepts = 0;
    for (int i = 0; i < n; ++i) {
        Rng rng = stream_rng(seed, kInit, static_cast<uint64_t>(i));
        for (;;) {
            ++attempts;
            const Candidate c = draw_candidate(rng, box);
            if (is_feasible(p, WellState::from_vector(c.x), ControlInput::from_vector(c.u))) {
                ++accepts;
                break;
            }
        }
    }
    return 1.0 - static_cast<double>(accepts) / static_cast<double>(attempts);
}

// ===== Persistence ===========================================================

namespace {

void save_split(const std::string& path, const Mat& inputs, const Mat& extra,
                const std::vector<std::string>& extra_names) {
    std::vector<std::string> cols = {"t_s", "x1_s", "x2_s", "x3_s", "u1_s", "u2_s"};
    cols.insert(cols.end(), extra_names.begin(), extra_names.end());
    CsvWriter csv(cols);
    for (long i = 0; i < inputs.cols(); ++i) {
        std::vector<double> row(inputs.col(i).data(), inputs.col(i).data() + 6);
        for (long r = 0; r < extra.rows(); ++r) row.push_back(extra(r, i));
        csv.row(row);
    }
    csv.save(path);
}

Mat load_split(const std::string& path, Mat& extra, int n_extra) {
    const CsvData data = read_csv(path);
    if (static_cast<int>(data.columns.size()) != 6 + n_extra)
        throw std::invalid_argument("dataset split has unexpected column count: " + path);
    const long n = static_cast<long>(data.rows.size());
    Mat inputs(6, n);
    extra.resize(n_extra, n);
    for (long i = 0; i < n; ++i) {
        for (int c = 0; c < 6; ++c) inputs(c, i) = data.rows[i][c];
        for (int c = 0; c < n_extra; ++c) extra(c, i) = data.rows[i][6 + c];
    }
    return inputs;
}

}  // namespace

void save_dataset(const PincDataset& ds, const std::string& prefix) {
    save_split(prefix + "_init.csv", ds.init_inputs, ds.init_targets,
               {"tg1_s", "tg2_s", "tg3_s"});
    save_split(prefix + "_colloc.csv", ds.colloc_inputs, ds.colloc_controls, {"u1", "u2"});
    save_split(prefix + "_val.csv", ds.val_inputs, ds.val_targets, {"tg1_s", "tg2_s", "tg3_s"});

    json j;
    j["state_lo"] = {ds.scaler.box().lo[0], ds.scaler.box().lo[1], ds.scaler.box().lo[2]};
    j["state_hi"] = {ds.scaler.box().hi[0], ds.scaler.box().hi[1], ds.scaler.box().hi[2]};
    j["t_horizon_s"] = kStepSeconds;
    atomic_write_file(prefix + "_scaler.json", j.dump(2) + "\n");
}

PincDataset load_dataset(const std::string& prefix) {
    PincDataset ds;
    ds.init_inputs = load_split(prefix + "_init.csv", ds.init_targets, 3);
    ds.colloc_inputs = load_split(prefix + "_colloc.csv", ds.colloc_controls, 2);
    ds.val_inputs = load_split(prefix + "_val.csv", ds.val_targets, 3);

    std::ifstream in(prefix + "_scaler.json");
    if (!in) throw std::invalid_argument("cannot open scaler sidecar: " + prefix);
    const json j = json::parse(in);
    DomainBox box;
    for (int i = 0; i < 3; ++i) {
        box.lo[i] = j.at("state_lo").at(i).get<double>();
        box.hi[i] = j.at("state_hi").at(i).get<double>();
    }
    ds.scaler = Scaler(box);
    return ds;
}

}  // namespace pincwell
