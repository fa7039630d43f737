// Command-line front end: every experiment is a subcommand that writes CSV
// files plus a manifest (effective config + seed) into --out.
#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "pincwell/control.hpp"
#include "pincwell/dataset.hpp"
#include "pincwell/integrator.hpp"
#include "pincwell/io.hpp"
#include "pincwell/neural.hpp"
#include "pincwell/training.hpp"
#include "pincwell/well_model.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pincwell;

namespace {

// ----- config-file merging ---------------------------------------------------
// Flags win over config-file values, which win over defaults. Every command
// funnels its parameters through `resolve`, so the manifest records exactly
// the values that were used.
struct Params {
    CLI::App* cmd = nullptr;
    json file;       // parsed --config, or empty
    json effective;  // accumulated merged values

    void load_file(const std::string& path) {
        if (path.empty()) return;
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open config file: " + path);
        file = json::parse(in);
    }

    template <class T>
    void resolve(const std::string& key, T& value) {
        if (cmd->count("--" + key) == 0 && file.contains(key)) value = file.at(key).get<T>();
        effective[key] = value;
    }
};

std::string well_config(const std::string& configs_dir, int well) {
    if (well < 1 || well > 3) throw std::runtime_error("--well must be 1, 2 or 3");
    return configs_dir + "/well" + std::to_string(well) + ".json";
}

fs::path prepare_out(const std::string& out) {
    fs::path dir(out.empty() ? "." : out);
    fs::create_directories(dir);
    return dir;
}

void finish(const fs::path& out, const std::string& command, const Params& par, uint64_t seed) {
    write_manifest((out / "manifest.json").string(), command, par.effective.dump(2), seed);
}

DomainBox load_box(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open box file: " + path);
    const json j = json::parse(in);
    DomainBox box;
    for (int i = 0; i < 3; ++i) {
        box.lo[i] = j.at("state_lo").at(i).get<double>();
        box.hi[i] = j.at("state_hi").at(i).get<double>();
    }
    box.validate();
    return box;
}

void save_box(const DomainBox& box, const std::string& path) {
    json j;
    j["state_lo"] = {box.lo[0], box.lo[1], box.lo[2]};
    j["state_hi"] = {box.hi[0], box.hi[1], box.hi[2]};
    atomic_write_file(path, j.dump(2) + "\n");
}

// Piecewise-constant random schedule: one draw per `block`-second block, in
// block order (u1 then u2), from the well's exploration ranges.
ControlSchedule random_schedule(const ExplorationRanges& r, double duration, double block,
                                uint64_t seed) {
    Rng rng(seed);
    ControlSchedule sched;
    for (double t = 0.0; t < duration; t += block) {
        const double u1 = rng.uniform(r.u1_min, r.u1_max);
        const double u2 = rng.uniform(r.u2_min, r.u2_max);
        sched.push_back({t, ControlInput{u1, u2}});
    }
    return sched;
}

struct Scenario {
    int well = 1;
    Vec2 u_start{0.5, 0.5};
    std::vector<double> refs_bar;  // one entry per 60 s step
    MpcConfig mpc;
};

Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open scenario file: " + path);
    const json j = json::parse(in);
    Scenario sc;
    sc.well = j.value("well", 1);
    if (j.contains("u_start")) {
        sc.u_start[0] = j.at("u_start").at(0).get<double>();
        sc.u_start[1] = j.at("u_start").at(1).get<double>();
    }
    for (const auto& step : j.at("reference_steps")) {
        const int n = step.at("n").get<int>();
        const double ref = step.at("ref_bar").get<double>();
        for (int k = 0; k < n; ++k) sc.refs_bar.push_back(ref);
    }
    if (j.contains("mpc")) {
        const json& m = j.at("mpc");
        sc.mpc.horizon = m.value("horizon", sc.mpc.horizon);
        sc.mpc.control_horizon = m.value("control_horizon", sc.mpc.control_horizon);
        sc.mpc.q_near = m.value("q_near", sc.mpc.q_near);
        sc.mpc.q_far = m.value("q_far", sc.mpc.q_far);
        sc.mpc.solver_iters = m.value("solver_iters", sc.mpc.solver_iters);
        if (m.contains("r_du")) {
            sc.mpc.r_du[0] = m.at("r_du").at(0).get<double>();
            sc.mpc.r_du[1] = m.at("r_du").at(1).get<double>();
        }
    }
    sc.mpc.validate();
    return sc;
}

PincModel assemble_pinc(const std::string& net_path, const std::string& algnet_prefix,
                        std::unique_ptr<FeedforwardNetwork>& net_store, AlgNetModel& alg_store) {
    if (net_path.empty() || algnet_prefix.empty())
        throw std::runtime_error("the network controller needs --net and --algnet");
    net_store = load_network(net_path);
    if (net_store->input_dim() != 6 || net_store->output_dim() != 3)
        throw std::runtime_error("--net is not a 6-in/3-out state network");
    alg_store = load_algnet(algnet_prefix);
    return PincModel{net_store.get(), &alg_store, Scaler(alg_store.box)};
}

double exact_pbh_bar(const WellParameters& p, const Vec3& x, const Vec2& u) {
    return compute_algebraics(p, WellState::from_vector(x), ControlInput::from_vector(u),
                              EvalMode::exact)
               .P_bh /
           1e5;
}

double mean(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double stddev(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean(v);
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

// ----- subcommand bodies -----------------------------------------------------

struct CommonFlags {
    int well = 1;
    uint64_t seed = 1;
    std::string out = "out";
    std::string config;
    std::string configs_dir = "configs";
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--well", f.well, "well id (1|2|3)");
    cmd->add_option("--seed", f.seed, "random seed");
    cmd->add_option("--out", f.out, "output directory");
    cmd->add_option("--config", f.config, "JSON config file; flags override its values");
    cmd->add_option("--configs", f.configs_dir, "directory holding wellN.json");
}

void resolve_common(Params& par, CommonFlags& f) {
    par.resolve("well", f.well);
    par.resolve("seed", f.seed);
    par.resolve("out", f.out);
    par.resolve("configs", f.configs_dir);
}

int cmd_simulate(Params& par, CommonFlags& cf, double duration, double dt, double u1, double u2,
                 std::vector<double> x0, std::string schedule, double block) {
    par.resolve("duration", duration);
    par.resolve("dt", dt);
    par.resolve("u1", u1);
    par.resolve("u2", u2);
    par.resolve("schedule", schedule);
    par.resolve("block", block);

    const WellParameters p = load_well_parameters(well_config(cf.configs_dir, cf.well));
    ControlSchedule sched;
    if (schedule == "constant") {
        sched = {{0.0, ControlInput{u1, u2}}};
    } else if (schedule == "random") {
        sched = random_schedule(load_exploration_ranges(well_config(cf.configs_dir, cf.well)),
                                duration, block, cf.seed);
    } else {
        throw std::runtime_error("--schedule must be constant or random");
    }

    WellState start;
    if (x0.empty()) {
        start = steady_state(p, sched.front().second);
    } else if (x0.size() == 3) {
        start = WellState{x0[0], x0[1], x0[2]};
    } else {
        throw std::runtime_error("--x0 needs exactly three values");
    }

    const Trajectory traj = simulate(p, start, sched, duration, dt, /*record_algebraics=*/true);
    const fs::path out = prepare_out(cf.out);
    traj.to_csv((out / "trajectory.csv").string());
    finish(out, "simulate", par, cf.seed);
    std::cout << "simulate: " << traj.size() << " samples -> " << (out / "trajectory.csv").string()
              << "\n";
    return 0;
}

int cmd_gen_data(Params& par, CommonFlags& cf, int nt, int nf, int nval, int rollouts) {
    par.resolve("Nt", nt);
    par.resolve("Nf", nf);
    par.resolve("Nval", nval);
    par.resolve("rollouts", rollouts);

    const std::string wc = well_config(cf.configs_dir, cf.well);
    const WellParameters p = load_well_parameters(wc);
    const DomainBox box = explore_domain(p, load_exploration_ranges(wc), rollouts, cf.seed);
    const PincDataset ds = sample_dataset(p, box, nt, nf, nval, cf.seed);
    const double rejection = measure_rejection_rate(p, box, 500, cf.seed + 1);

    const fs::path out = prepare_out(cf.out);
    save_dataset(ds, (out / "dataset").string());
    save_box(box, (out / "box.json").string());
    par.effective["rejection_rate"] = rejection;
    finish(out, "gen-data", par, cf.seed);
    std::cout << "gen-data: Nt=" << ds.n_init() << " Nf=" << ds.n_colloc()
              << " Nval=" << ds.n_val() << " rejection rate " << rejection << " -> "
              << (out / "dataset").string() << "_*\n";
    return 0;
}

int cmd_train_pinc(Params& par, CommonFlags& cf, std::string data, std::string arch, int layers,
                   int neurons, int adam_epochs, long lbfgs_iters, double lambda_y, double lambda_f,
                   int val_every, std::string resume, int nt, int nf, int nval) {
    par.resolve("data", data);
    par.resolve("arch", arch);
    par.resolve("layers", layers);
    par.resolve("neurons", neurons);
    par.resolve("adam_epochs", adam_epochs);
    par.resolve("lbfgs_iters", lbfgs_iters);
    par.resolve("lambda_y", lambda_y);
    par.resolve("lambda_f", lambda_f);
    par.resolve("val_every", val_every);
    par.resolve("resume", resume);
    par.resolve("Nt", nt);
    par.resolve("Nf", nf);
    par.resolve("Nval", nval);

    const std::string wc = well_config(cf.configs_dir, cf.well);
    const WellParameters p = load_well_parameters(wc);
    PincDataset ds;
    if (!data.empty()) {
        ds = load_dataset(data);
    } else {
        const DomainBox box = explore_domain(p, load_exploration_ranges(wc), 20, cf.seed);
        ds = sample_dataset(p, box, nt, nf, nval, cf.seed);
    }

    const fs::path out = prepare_out(cf.out);
    TrainConfig cfg;
    cfg.arch = arch;
    cfg.n_layers = layers;
    cfg.width = neurons;
    cfg.weights = {lambda_y, lambda_f};
    cfg.adam.epochs = adam_epochs;
    cfg.lbfgs.max_iters = lbfgs_iters;
    cfg.val_every = val_every;
    cfg.seed = cf.seed;
    cfg.metrics_csv = (out / "metrics.csv").string();
    cfg.checkpoint = (out / "network.txt").string();
    cfg.init_checkpoint = resume;

    const TrainResult res = train_pinc(p, ds, cfg);
    save_box(ds.scaler.box(), (out / "box.json").string());
    par.effective["best_val"] = res.best_val;
    par.effective["fevals"] = res.fevals;
    finish(out, "train-pinc", par, cf.seed);
    std::cout << "train-pinc: best validation MSE " << format_double(res.best_val) << " at iter "
              << res.best_iter << " (" << to_string(res.lbfgs_status) << ", " << res.fevals
              << " fevals) -> " << cfg.checkpoint << "\n";
    return 0;
}

int cmd_train_algnet(Params& par, CommonFlags& cf, std::string box_path, int samples, int layers,
                     int neurons, long lbfgs_iters, int heldout, int rollouts) {
    par.resolve("box", box_path);
    par.resolve("samples", samples);
    par.resolve("layers", layers);
    par.resolve("neurons", neurons);
    par.resolve("lbfgs_iters", lbfgs_iters);
    par.resolve("heldout", heldout);
    par.resolve("rollouts", rollouts);

    const std::string wc = well_config(cf.configs_dir, cf.well);
    const WellParameters p = load_well_parameters(wc);
    const DomainBox box = box_path.empty()
                              ? explore_domain(p, load_exploration_ranges(wc), rollouts, cf.seed)
                              : load_box(box_path);

    AlgNetConfig cfg;
    cfg.n_layers = layers;
    cfg.width = neurons;
    cfg.lbfgs_iters = lbfgs_iters;
    cfg.n_heldout = heldout;
    cfg.seed = cf.seed;
    const AlgTrainResult res = train_algnet(p, box, samples, cfg);

    const fs::path out = prepare_out(cf.out);
    save_algnet(res.model, (out / "algnet").string());
    par.effective["train_mse"] = res.train_mse;
    par.effective["heldout_pbh_mae_bar"] = res.heldout_pbh_mae_bar;
    finish(out, "train-algnet", par, cf.seed);
    std::cout << "train-algnet: train MSE " << format_double(res.train_mse)
              << ", held-out P_bh MAE " << format_double(res.heldout_pbh_mae_bar) << " bar -> "
              << (out / "algnet").string() << "_*\n";
    return 0;
}

int cmd_sweep(Params& par, CommonFlags& cf, std::string data, std::vector<std::string> archs,
              std::vector<int> layers, std::vector<int> neurons, int repeats, int adam_epochs,
              long lbfgs_iters, int nt, int nf, int nval) {
    par.resolve("data", data);
    par.resolve("archs", archs);
    par.resolve("layers", layers);
    par.resolve("neurons", neurons);
    par.resolve("repeats", repeats);
    par.resolve("adam_epochs", adam_epochs);
    par.resolve("lbfgs_iters", lbfgs_iters);
    par.resolve("Nt", nt);
    par.resolve("Nf", nf);
    par.resolve("Nval", nval);

    const std::string wc = well_config(cf.configs_dir, cf.well);
    const WellParameters p = load_well_parameters(wc);
    PincDataset ds;
    if (!data.empty()) {
        ds = load_dataset(data);
    } else {
        const DomainBox box = explore_domain(p, load_exploration_ranges(wc), 20, cf.seed);
        ds = sample_dataset(p, box, nt, nf, nval, cf.seed);
    }

    SweepSpec spec;
    spec.archs = archs;
    spec.layers = layers;
    spec.widths = neurons;
    spec.repeats = repeats;
    spec.base.adam.epochs = adam_epochs;
    spec.base.lbfgs.max_iters = lbfgs_iters;
    spec.base.seed = cf.seed;

    const fs::path out = prepare_out(cf.out);
    const auto rows = sweep(p, ds, spec, (out / "sweep.csv").string());
    finish(out, "sweep", par, cf.seed);
    std::cout << "sweep: " << rows.size() << " runs -> " << (out / "sweep.csv").string() << "\n";
    return 0;
}

int cmd_predict(Params& par, CommonFlags& cf, std::string net_path, std::string algnet_prefix,
                int sims, long steps) {
    par.resolve("net", net_path);
    par.resolve("algnet", algnet_prefix);
    par.resolve("sims", sims);
    par.resolve("steps", steps);

    const std::string wc = well_config(cf.configs_dir, cf.well);
    const WellParameters p = load_well_parameters(wc);
    const fs::path out = prepare_out(cf.out);

    CsvWriter stats({"sim", "state_iae_scaled", "pbh_iae_bar"});
    if (sims <= 0 || steps <= 0) {
        std::cerr << "warning: empty prediction run (sims=" << sims << ", steps=" << steps
                  << "); writing empty statistics\n";
        stats.save((out / "predict_stats.csv").string());
        finish(out, "predict", par, cf.seed);
        return 0;
    }

    std::unique_ptr<FeedforwardNetwork> net;
    AlgNetModel alg;
    const PincModel m = assemble_pinc(net_path, algnet_prefix, net, alg);
    const ExplorationRanges ranges = load_exploration_ranges(wc);

    const PredictionStats ps =
        evaluate_prediction(make_pinc_step_model(m), p, m.scaler, ranges, sims, steps, cf.seed);
    for (int i = 0; i < sims; ++i)
        stats.row({static_cast<double>(i), ps.state_iae[i], ps.pbh_iae_bar[i]});
    stats.save((out / "predict_stats.csv").string());

    // one overlay rollout (model self-loop vs. exact integration) for plotting:
    // redraw the first accepted rollout exactly as the evaluation harness does
    {
        const StepModel model = make_pinc_step_model(m);
        CsvWriter overlay({"t", "u1", "u2", "m_G_an", "m_G_tb", "m_L_tb", "m_G_an_pred",
                           "m_G_tb_pred", "m_L_tb_pred", "P_bh_bar", "P_bh_bar_pred"});
        for (int attempt = 0; attempt < 200; ++attempt) {
            Rng rng = stream_rng(cf.seed, 4, 0 * 200 + attempt);
            Vec3 x0;
            const DomainBox& box = m.scaler.box();
            for (int i = 0; i < 3; ++i) x0[i] = rng.uniform(box.lo[i], box.hi[i]);
            std::vector<Vec2> us(steps);
            for (long j = 0; j < steps; ++j) {
                us[j][0] = rng.uniform(ranges.u1_min, ranges.u1_max);
                us[j][1] = rng.uniform(ranges.u2_min, ranges.u2_max);
            }
            try {
                if (!is_feasible(p, WellState::from_vector(x0),
                                 ControlInput::from_vector(us[0])))
                    continue;
                std::vector<Vec3> truth{x0};
                for (long j = 0; j < steps; ++j)
                    truth.push_back(step_60s(p, WellState::from_vector(truth.back()),
                                             ControlInput::from_vector(us[j]))
                                        .as_vector());
                Vec3 xs = m.scaler.scale_state(x0);
                for (long j = 0; j < steps; ++j) {
                    xs = model.next(xs, us[j]);
                    const Vec3 pred = m.scaler.unscale_state(xs);
                    overlay.row({60.0 * static_cast<double>(j + 1), us[j][0], us[j][1],
                                 truth[j + 1][0], truth[j + 1][1], truth[j + 1][2], pred[0],
                                 pred[1], pred[2], exact_pbh_bar(p, truth[j + 1], us[j]),
                                 model.pbh_bar(xs, us[j])});
                }
                break;
            } catch (const InfeasibleState&) {
            } catch (const NoConvergence&) {
            }
        }
        overlay.save((out / "predict_overlay.csv").string());
    }

    par.effective["mean_state_iae"] = ps.mean_state_iae;
    par.effective["mean_pbh_iae_bar"] = ps.mean_pbh_iae_bar;
    finish(out, "predict", par, cf.seed);
    std::cout << "predict: mean state IAE " << format_double(ps.mean_state_iae) << " (max "
              << format_double(ps.max_state_iae) << "), mean P_bh IAE "
              << format_double(ps.mean_pbh_iae_bar) << " bar (max "
              << format_double(ps.max_pbh_iae_bar) << ")\n";
    return 0;
}

int cmd_mpc(Params& par, CommonFlags& cf, std::string scenario_path, std::string controller,
            double noise, int reps, std::string net_path, std::string algnet_prefix,
            long solver_iters) {
    par.resolve("scenario", scenario_path);
    par.resolve("controller", controller);
    par.resolve("noise", noise);
    par.resolve("reps", reps);
    par.resolve("net", net_path);
    par.resolve("algnet", algnet_prefix);
    par.resolve("solver_iters", solver_iters);

    Scenario sc = load_scenario(scenario_path);
    if (par.cmd->count("--well") > 0) sc.well = cf.well;
    par.effective["well"] = sc.well;
    if (solver_iters > 0) sc.mpc.solver_iters = solver_iters;
    const WellParameters p = load_well_parameters(well_config(cf.configs_dir, sc.well));
    const long n_steps = static_cast<long>(sc.refs_bar.size());

    const Vec3 x0 = steady_state(p, ControlInput::from_vector(sc.u_start)).as_vector();

    std::vector<std::string> names;
    if (controller == "pinc" || controller == "slmpc")
        names = {controller};
    else if (controller == "both")
        names = {"pinc", "slmpc"};
    else
        throw std::runtime_error("--controller must be pinc, slmpc or both");

    std::unique_ptr<FeedforwardNetwork> net;
    AlgNetModel alg;
    PincModel pm;
    bool have_pinc = false;
    for (const auto& name : names)
        if (name == "pinc") {
            pm = assemble_pinc(net_path, algnet_prefix, net, alg);
            have_pinc = true;
        }
    // The noise basis needs a scaled-state box even for the pure-slmpc runs;
    // use the network's training box when available, otherwise +-15% around
    // the start state.
    Scaler noise_scaler;
    if (have_pinc) {
        noise_scaler = pm.scaler;
    } else {
        DomainBox b;
        b.lo = 0.85 * x0;
        b.hi = 1.15 * x0;
        noise_scaler = Scaler(b);
    }

    const fs::path out = prepare_out(cf.out);
    CsvWriter stats({"rep", "seed", "iae_pinc_bar", "iae_slmpc_bar"});
    std::vector<ClosedLoopResult> first_runs(names.size());
    std::vector<std::vector<double>> iaes(names.size());

    for (int rep = 0; rep < reps; ++rep) {
        NoiseSpec ns;
        ns.rel_std = noise;
        ns.seed = cf.seed + static_cast<uint64_t>(rep);
        const NoiseSpec* np = noise > 0.0 ? &ns : nullptr;
        std::vector<double> row{static_cast<double>(rep), static_cast<double>(ns.seed),
                                std::nan(""), std::nan("")};
        for (size_t c = 0; c < names.size(); ++c) {
            const Controller ctrl = names[c] == "pinc" ? make_pinc_controller(pm, sc.mpc)
                                                       : make_slmpc_controller(p, sc.mpc);
            const ClosedLoopResult res = closed_loop(ctrl, p, noise_scaler, x0,
                                                     Vec2(sc.u_start), sc.refs_bar, n_steps, np);
            iaes[c].push_back(res.iae_bar);
            row[names[c] == "pinc" ? 2 : 3] = res.iae_bar;
            if (rep == 0) {
                first_runs[c] = res;
                res.to_csv((out / ("loop_" + names[c] + ".csv")).string());
            }
        }
        stats.row(row);
    }
    stats.save((out / "runs.csv").string());

    if (names.size() == 2) {
        CsvWriter overlay({"t", "ref_bar", "pbh_pinc_bar", "pbh_slmpc_bar", "u1_pinc", "u2_pinc",
                           "u1_slmpc", "u2_slmpc"});
        const ClosedLoopResult& a = first_runs[0];
        const ClosedLoopResult& b = first_runs[1];
        for (long k = 0; k < n_steps; ++k)
            overlay.row({a.times[k], a.ref_bar[k], a.pbh_bar[k], b.pbh_bar[k], a.controls[k][0],
                         a.controls[k][1], b.controls[k][0], b.controls[k][1]});
        overlay.save((out / "overlay.csv").string());
    }

    for (size_t c = 0; c < names.size(); ++c) {
        par.effective["iae_mean_" + names[c]] = mean(iaes[c]);
        par.effective["iae_std_" + names[c]] = stddev(iaes[c]);
        std::cout << "mpc " << names[c] << ": IAE mean " << format_double(mean(iaes[c]))
                  << " bar, std " << format_double(stddev(iaes[c])) << " over " << reps
                  << " rep(s)\n";
    }
    finish(out, "mpc", par, cf.seed);
    return 0;
}

int cmd_ablate(Params& par, CommonFlags& cf, std::string data, int runs, int layers, int neurons,
               int probe_epochs, int adam_epochs, long lbfgs_iters, bool smoke, int nt, int nf,
               int nval) {
    par.resolve("data", data);
    par.resolve("runs", runs);
    par.resolve("layers", layers);
    par.resolve("neurons", neurons);
    par.resolve("probe_epochs", probe_epochs);
    par.resolve("adam_epochs", adam_epochs);
    par.resolve("lbfgs_iters", lbfgs_iters);
    par.resolve("Nt", nt);
    par.resolve("Nf", nf);
    par.resolve("Nval", nval);
    if (smoke) runs = 1;
    par.effective["runs"] = runs;

    const std::string wc = well_config(cf.configs_dir, cf.well);
    const WellParameters p = load_well_parameters(wc);
    PincDataset ds;
    if (!data.empty()) {
        ds = load_dataset(data);
    } else {
        const DomainBox box = explore_domain(p, load_exploration_ranges(wc), 20, cf.seed);
        ds = sample_dataset(p, box, nt, nf, nval, cf.seed);
    }

    const fs::path out = prepare_out(cf.out);
    CsvWriter grads({"arch", "seed", "layer", "name", "mean_abs_grad"});
    CsvWriter endpoints({"arch", "seed", "best_val", "final_train", "status"});
    CsvWriter curves({"arch", "seed", "iter", "val_mse"});
    const PincLoss physics_loss(p, ds, LossWeights{0.0, 1.0});

    // physics-residual gradient magnitude at the last hidden layer, per run
    std::vector<double> last_hidden_skip, last_hidden_dense;

    for (const std::string arch : {std::string("skip"), std::string("dense")}) {
        for (int r = 0; r < runs; ++r) {
            const uint64_t seed = cf.seed + static_cast<uint64_t>(r);

            // probe: identical partially-trained checkpoint for both archs
            TrainConfig probe;
            probe.arch = arch;
            probe.n_layers = layers;
            probe.width = neurons;
            probe.adam.epochs = probe_epochs;
            probe.lbfgs.max_iters = 0;
            probe.val_every = std::max(1, probe_epochs / 4);
            probe.seed = seed;
            const TrainResult partial = train_pinc(p, ds, probe);

            Vec g;
            physics_loss.value_and_grad(*partial.last, g);
            const auto layout = partial.last->parameter_layout();
            const auto per_layer = partial.last->layer_mean_abs(g);
            for (size_t i = 0; i < layout.size(); ++i) {
                std::ostringstream line;
                line << arch << ',' << seed << ',' << i << ',' << layout[i].name << ','
                     << format_double(per_layer[i]);
                grads.raw_row(line.str());
            }
            // the deepest hidden layer sits just before the output slice
            const double lh = per_layer[layout.size() - 2];
            (arch == "skip" ? last_hidden_skip : last_hidden_dense).push_back(lh);

            // full run, resumed from the probe checkpoint
            const std::string ckpt = (out / ("probe_" + arch + "_" + std::to_string(r) + ".txt"))
                                         .string();
            save_network(*partial.last, ckpt);
            TrainConfig full;
            full.arch = arch;
            full.n_layers = layers;
            full.width = neurons;
            full.adam.epochs = std::max(0, adam_epochs - probe_epochs);
            full.lbfgs.max_iters = lbfgs_iters;
            full.seed = seed;
            full.init_checkpoint = ckpt;
            std::string status = "ok";
            double best_val = std::numeric_limits<double>::quiet_NaN();
            double final_train = std::numeric_limits<double>::quiet_NaN();
            try {
                const TrainResult res = train_pinc(p, ds, full);
                best_val = res.best_val;
                final_train = res.final_loss.total;
                for (const auto& mrow : res.metrics) {
                    std::ostringstream line;
                    line << arch << ',' << seed << ',' << (probe_epochs + mrow.iter) << ','
                         << format_double(mrow.val_mse);
                    curves.raw_row(line.str());
                }
            } catch (const TrainingDiverged& e) {
                status = std::string("diverged: ") + e.what();
            }
            std::ostringstream line;
            line << arch << ',' << seed << ',' << format_double(best_val) << ','
                 << format_double(final_train) << ',' << status;
            endpoints.raw_row(line.str());
            std::remove(ckpt.c_str());
        }
    }

    grads.save((out / "ablate_gradients.csv").string());
    endpoints.save((out / "ablate_runs.csv").string());
    curves.save((out / "ablate_curves.csv").string());

    const double ratio = mean(last_hidden_skip) / std::max(mean(last_hidden_dense), 1e-300);
    par.effective["last_hidden_grad_skip"] = mean(last_hidden_skip);
    par.effective["last_hidden_grad_dense"] = mean(last_hidden_dense);
    par.effective["grad_ratio_skip_over_dense"] = ratio;
    finish(out, "ablate", par, cf.seed);
    std::cout << "ablate: last-hidden-layer physics gradient ratio (skip/dense) "
              << format_double(ratio) << " over " << runs << " run(s) per arch\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"gas-lift well PINC toolkit"};
    app.require_subcommand(1);

    // simulate
    CommonFlags f_sim;
    double sim_duration = 3000, sim_dt = 1.0, sim_u1 = 0.5, sim_u2 = 0.5, sim_block = 300;
    std::vector<double> sim_x0;
    std::string sim_schedule = "constant";
    auto* sim = app.add_subcommand("simulate", "exact RK4 rollout to CSV");
    add_common(sim, f_sim);
    sim->add_option("--duration", sim_duration, "simulated seconds");
    sim->add_option("--dt", sim_dt, "integration step [s]");
    sim->add_option("--u1", sim_u1, "production choke (constant schedule)");
    sim->add_option("--u2", sim_u2, "gas-lift choke (constant schedule)");
    sim->add_option("--x0", sim_x0, "initial masses [kg]; default: steady state")->expected(3);
    sim->add_option("--schedule", sim_schedule, "constant|random");
    sim->add_option("--block", sim_block, "random-schedule block length [s]");

    // gen-data
    CommonFlags f_gen;
    int gen_nt = 1000, gen_nf = 10000, gen_nval = 100, gen_rollouts = 20;
    auto* gen = app.add_subcommand("gen-data", "explore the state box and sample a dataset");
    add_common(gen, f_gen);
    gen->add_option("--Nt", gen_nt, "initial-condition points");
    gen->add_option("--Nf", gen_nf, "collocation points");
    gen->add_option("--Nval", gen_nval, "validation points");
    gen->add_option("--rollouts", gen_rollouts, "exploration rollouts");

    // train-pinc
    CommonFlags f_tp;
    std::string tp_data, tp_arch = "skip", tp_resume;
    int tp_layers = 6, tp_neurons = 30, tp_adam = 1000, tp_val_every = 25;
    long tp_lbfgs = 2000;
    double tp_ly = 1.0, tp_lf = 1.0;
    int tp_nt = 1000, tp_nf = 10000, tp_nval = 100;
    auto* tp = app.add_subcommand("train-pinc", "train the one-step state network");
    add_common(tp, f_tp);
    tp->add_option("--data", tp_data, "dataset prefix from gen-data; omit to sample fresh");
    tp->add_option("--arch", tp_arch, "skip|dense");
    tp->add_option("--layers", tp_layers, "hidden layers");
    tp->add_option("--neurons", tp_neurons, "neurons per hidden layer");
    tp->add_option("--adam_epochs", tp_adam, "phase-1 epochs");
    tp->add_option("--lbfgs_iters", tp_lbfgs, "phase-2 iteration cap");
    tp->add_option("--lambda_y", tp_ly, "data-term weight");
    tp->add_option("--lambda_f", tp_lf, "physics-term weight");
    tp->add_option("--val_every", tp_val_every, "validation cadence");
    tp->add_option("--resume", tp_resume, "start from this network checkpoint");
    tp->add_option("--Nt", tp_nt, "fresh-sampling initial points");
    tp->add_option("--Nf", tp_nf, "fresh-sampling collocation points");
    tp->add_option("--Nval", tp_nval, "fresh-sampling validation points");

    // train-algnet
    CommonFlags f_ta;
    std::string ta_box;
    int ta_samples = 5000, ta_layers = 4, ta_neurons = 30, ta_heldout = 1000, ta_rollouts = 20;
    long ta_lbfgs = 5000;
    auto* ta = app.add_subcommand("train-algnet", "train the algebraic-output network");
    add_common(ta, f_ta);
    ta->add_option("--box", ta_box, "state-box JSON (from gen-data); omit to explore");
    ta->add_option("--samples", ta_samples, "training samples");
    ta->add_option("--layers", ta_layers, "hidden layers");
    ta->add_option("--neurons", ta_neurons, "neurons per hidden layer");
    ta->add_option("--lbfgs_iters", ta_lbfgs, "optimizer iteration cap");
    ta->add_option("--heldout", ta_heldout, "held-out audit points");
    ta->add_option("--rollouts", ta_rollouts, "exploration rollouts when no --box");

    // sweep
    CommonFlags f_sw;
    std::string sw_data;
    std::vector<std::string> sw_archs{"skip"};
    std::vector<int> sw_layers{6}, sw_neurons{30};
    int sw_repeats = 1, sw_adam = 1000;
    long sw_lbfgs = 2000;
    int sw_nt = 1000, sw_nf = 10000, sw_nval = 100;
    auto* sw = app.add_subcommand("sweep", "train a grid of architectures");
    add_common(sw, f_sw);
    sw->add_option("--data", sw_data, "dataset prefix; omit to sample fresh");
    sw->add_option("--archs", sw_archs, "architectures");
    sw->add_option("--layers", sw_layers, "layer counts");
    sw->add_option("--neurons", sw_neurons, "widths");
    sw->add_option("--repeats", sw_repeats, "seeds per combination");
    sw->add_option("--adam_epochs", sw_adam, "phase-1 epochs");
    sw->add_option("--lbfgs_iters", sw_lbfgs, "phase-2 iteration cap");
    sw->add_option("--Nt", sw_nt, "fresh-sampling initial points");
    sw->add_option("--Nf", sw_nf, "fresh-sampling collocation points");
    sw->add_option("--Nval", sw_nval, "fresh-sampling validation points");

    // predict
    CommonFlags f_pr;
    std::string pr_net, pr_algnet;
    int pr_sims = 20;
    long pr_steps = 50;
    auto* pr = app.add_subcommand("predict", "self-loop prediction audit vs exact simulation");
    add_common(pr, f_pr);
    pr->add_option("--net", pr_net, "state network checkpoint");
    pr->add_option("--algnet", pr_algnet, "algebraic-network prefix");
    pr->add_option("--sims", pr_sims, "random rollouts");
    pr->add_option("--steps", pr_steps, "60 s steps per rollout");

    // mpc
    CommonFlags f_mp;
    std::string mp_scenario = "configs/scenario_pbh_steps.json", mp_controller = "slmpc";
    std::string mp_net, mp_algnet;
    double mp_noise = 0.0;
    int mp_reps = 1;
    long mp_solver_iters = 0;
    auto* mp = app.add_subcommand("mpc", "closed-loop pressure tracking");
    add_common(mp, f_mp);
    mp->add_option("--scenario", mp_scenario, "scenario JSON");
    mp->add_option("--controller", mp_controller, "pinc|slmpc|both");
    mp->add_option("--noise", mp_noise, "measurement noise (fraction of scaled span)");
    mp->add_option("--reps", mp_reps, "noise repetitions");
    mp->add_option("--net", mp_net, "state network checkpoint (pinc controller)");
    mp->add_option("--algnet", mp_algnet, "algebraic-network prefix (pinc controller)");
    mp->add_option("--solver_iters", mp_solver_iters, "override scenario solver iterations");

    // ablate
    CommonFlags f_ab;
    std::string ab_data;
    int ab_runs = 10, ab_layers = 6, ab_neurons = 30, ab_probe = 500, ab_adam = 1000;
    long ab_lbfgs = 2000;
    bool ab_smoke = false;
    int ab_nt = 1000, ab_nf = 10000, ab_nval = 100;
    auto* ab = app.add_subcommand("ablate", "skip vs dense: gradient stats and paired runs");
    add_common(ab, f_ab);
    ab->add_option("--data", ab_data, "dataset prefix; omit to sample fresh");
    ab->add_option("--runs", ab_runs, "runs per architecture");
    ab->add_option("--layers", ab_layers, "hidden layers");
    ab->add_option("--neurons", ab_neurons, "neurons per hidden layer");
    ab->add_option("--probe_epochs", ab_probe, "epochs before the gradient probe");
    ab->add_option("--adam_epochs", ab_adam, "total phase-1 epochs");
    ab->add_option("--lbfgs_iters", ab_lbfgs, "phase-2 iteration cap");
    ab->add_flag("--smoke", ab_smoke, "single-seed smoke mode");
    ab->add_option("--Nt", ab_nt, "fresh-sampling initial points");
    ab->add_option("--Nf", ab_nf, "fresh-sampling collocation points");
    ab->add_option("--Nval", ab_nval, "fresh-sampling validation points");

    CLI11_PARSE(app, argc, argv);

    try {
        auto run = [&](CLI::App* cmd, CommonFlags& cf, auto body) -> int {
            Params par;
            par.cmd = cmd;
            par.load_file(cf.config);
            resolve_common(par, cf);
            return body(par);
        };
        if (sim->parsed())
            return run(sim, f_sim, [&](Params& par) {
                return cmd_simulate(par, f_sim, sim_duration, sim_dt, sim_u1, sim_u2, sim_x0,
                                    sim_schedule, sim_block);
            });
        if (gen->parsed())
            return run(gen, f_gen, [&](Params& par) {
                return cmd_gen_data(par, f_gen, gen_nt, gen_nf, gen_nval, gen_rollouts);
            });
        if (tp->parsed())
            return run(tp, f_tp, [&](Params& par) {
                return cmd_train_pinc(par, f_tp, tp_data, tp_arch, tp_layers, tp_neurons, tp_adam,
                                      tp_lbfgs, tp_ly, tp_lf, tp_val_every, tp_resume, tp_nt,
                                      tp_nf, tp_nval);
            });
        if (ta->parsed())
            return run(ta, f_ta, [&](Params& par) {
                return cmd_train_algnet(par, f_ta, ta_box, ta_samples, ta_layers, ta_neurons,
                                        ta_lbfgs, ta_heldout, ta_rollouts);
            });
        if (sw->parsed())
            return run(sw, f_sw, [&](Params& par) {
                return cmd_sweep(par, f_sw, sw_data, sw_archs, sw_layers, sw_neurons, sw_repeats,
                                 sw_adam, sw_lbfgs, sw_nt, sw_nf, sw_nval);
            });
        if (pr->parsed())
            return run(pr, f_pr, [&](Params& par) {
                return cmd_predict(par, f_pr, pr_net, pr_algnet, pr_sims, pr_steps);
            });
        if (mp->parsed())
            return run(mp, f_mp, [&](Params& par) {
                return cmd_mpc(par, f_mp, mp_scenario, mp_controller, mp_noise, mp_reps, mp_net,
                               mp_algnet, mp_solver_iters);
            });
        if (ab->parsed())
            return run(ab, f_ab, [&](Params& par) {
                return cmd_ablate(par, f_ab, ab_data, ab_runs, ab_layers, ab_neurons, ab_probe,
                                  ab_adam, ab_lbfgs, ab_smoke, ab_nt, ab_nf, ab_nval);
            });
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
