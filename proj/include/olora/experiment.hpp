#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "olora/config.hpp"

namespace olora {

struct RunArtifacts {
    int seed = 0;
    std::vector<StageResult> stages;
    ForgettingReport forgetting;
    std::vector<double> untrained_losses;
    double wall_clock_sec = 0.0;
};

struct ExperimentResult {
    RunConfig config;
    std::vector<RunArtifacts> runs;
};

inline double median(std::vector<double> v) {
    if (v.empty()) throw RangeError("median of empty set");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Runs the configured method once per seed. Each run is fully determined by
/// (config, seed); runs are independent and sequential here.
inline ExperimentResult run_experiment(const RunConfig& config, std::ostream* log = nullptr) {
    config.validate();
    const Method method = parse_method(config.method);
    ExperimentResult result;
    result.config = config;
    for (int seed : config.seeds) {
        const auto t0 = std::chrono::steady_clock::now();
        ContinualRun run(config.model, config.tasks, method, config.train,
                         static_cast<std::uint64_t>(seed));
        RunArtifacts art;
        art.seed = seed;
        art.untrained_losses = run.evaluate_all();
        art.stages = run.run_all();
        art.forgetting = forgetting_report(art.stages);
        art.wall_clock_sec =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (log != nullptr) {
            *log << config.method << " seed " << seed << ": final_avg_loss "
                 << art.forgetting.final_avg_loss << ", avg_forgetting "
                 << art.forgetting.average << " (" << std::fixed << std::setprecision(1)
                 << art.wall_clock_sec << "s)\n"
                 << std::defaultfloat << std::setprecision(6);
        }
        result.runs.push_back(std::move(art));
    }
    return result;
}

inline json stage_to_json(const StageResult& s) {
    json j;
    j["stage"] = s.stage;
    j["eval_losses"] = s.eval_losses;
    j["trainable_params"] = s.trainable_params;
    j["total_params"] = s.total_params;
    j["trainable_fraction"] = s.trainable_fraction;
    j["final_orth_fro"] = s.final_orth_fro;
    j["final_active_ranks"] = s.final_active_ranks;
    j["final_total_active_rank"] = s.final_total_active_rank;
    j["wall_clock_sec"] = s.wall_clock_sec;
    return j;
}

inline json summary_to_json(const ExperimentResult& r) {
    json j;
    j["format_version"] = 1;
    j["method"] = r.config.method;
    j["config"] = config_to_json(r.config);
    j["runs"] = json::array();
    std::vector<double> med_forget, med_final_avg, med_final_task, med_fraction;
    for (const RunArtifacts& art : r.runs) {
        json rj;
        rj["seed"] = art.seed;
        rj["untrained_losses"] = art.untrained_losses;
        rj["evaluation_matrix"] = json::array();
        for (const StageResult& s : art.stages) rj["evaluation_matrix"].push_back(s.eval_losses);
        rj["stages"] = json::array();
        for (const StageResult& s : art.stages) rj["stages"].push_back(stage_to_json(s));
        rj["forgetting"] = {{"per_task", art.forgetting.per_task},
                            {"average", art.forgetting.average},
                            {"final_avg_loss", art.forgetting.final_avg_loss}};
        const StageResult& last = art.stages.back();
        rj["final_task_loss"] = last.eval_losses.back();
        rj["trainable_fraction"] = last.trainable_fraction;
        rj["final_total_active_rank"] = last.final_total_active_rank;
        rj["wall_clock_sec"] = art.wall_clock_sec;
        j["runs"].push_back(std::move(rj));

        med_forget.push_back(art.forgetting.average);
        med_final_avg.push_back(art.forgetting.final_avg_loss);
        med_final_task.push_back(last.eval_losses.back());
        med_fraction.push_back(last.trainable_fraction);
    }
    j["medians"] = {{"avg_forgetting", median(med_forget)},
                    {"final_avg_loss", median(med_final_avg)},
                    {"final_task_loss", median(med_final_task)},
                    {"trainable_fraction", median(med_fraction)}};
    return j;
}

/// Step-level trace of one run as CSV: loss terms, learning rate, rank budget
/// and the per-weight active ranks.
inline void write_metrics_csv(const std::string& path, const std::vector<StageResult>& stages) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write metrics to " + path);
    out << "step,stage,task_loss,orth_loss,adalora_reg,distill_loss,total_loss,lr,budget,"
           "active_ranks\n";
    out << std::setprecision(17);
    for (const StageResult& s : stages) {
        for (const TraceRow& r : s.trace) {
            out << r.step << ',' << r.stage << ',' << r.task_loss << ',' << r.orth_loss << ','
                << r.adalora_reg << ',' << r.distill_loss << ',' << r.total_loss << ',' << r.lr
                << ',' << r.budget << ',';
            for (std::size_t i = 0; i < r.active_ranks.size(); ++i) {
                if (i > 0) out << ';';
                out << r.active_ranks[i];
            }
            out << '\n';
        }
    }
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    out << content;
}

/// Removes wall-clock fields in place so two summaries can be compared for
/// byte-identical determinism.
inline void strip_timing(json& j) {
    if (j.is_object()) {
        j.erase("wall_clock_sec");
        for (auto& [_, v] : j.items()) strip_timing(v);
    } else if (j.is_array()) {
        for (auto& v : j) strip_timing(v);
    }
}

struct MethodStats {
    std::string method;
    double med_forgetting = 0.0;
    double med_final_avg_loss = 0.0;
    double med_final_task_loss = 0.0;
    double med_fraction = 0.0;
    int runs = 0;
};

struct OrderingCheck {
    std::string name;
    bool applicable = false;
    bool passed = false;
};

struct CompareReport {
    std::vector<MethodStats> methods;
    std::vector<OrderingCheck> checks;

    const MethodStats* find(const std::string& m) const {
        for (const auto& s : methods)
            if (s.method == m) return &s;
        return nullptr;
    }

    std::string to_table() const {
        std::ostringstream out;
        out << std::left << std::setw(11) << "method" << std::right << std::setw(14)
            << "avg_forget" << std::setw(15) << "final_avg" << std::setw(15) << "final_task"
            << std::setw(11) << "frac" << std::setw(15) << "d_final_avg" << "\n";
        const double base = methods.empty() ? 0.0 : methods.front().med_final_avg_loss;
        out << std::fixed << std::setprecision(4);
        for (const auto& s : methods) {
            out << std::left << std::setw(11) << s.method << std::right << std::setw(14)
                << s.med_forgetting << std::setw(15) << s.med_final_avg_loss << std::setw(15)
                << s.med_final_task_loss << std::setw(11) << s.med_fraction << std::setw(15)
                << (s.med_final_avg_loss - base) << "\n";
        }
        for (const auto& c : checks) {
            out << (c.applicable ? (c.passed ? "PASS " : "FAIL ") : "n/a  ") << c.name << "\n";
        }
        return out.str();
    }
};

/// Tabulates summaries over the same task suite and evaluates the qualitative
/// ordering relations wherever the needed methods are present.
inline CompareReport compare_summaries(const std::vector<json>& summaries) {
    if (summaries.size() < 2) throw CompareError("compare needs at least two summaries");
    const json& ref = summaries.front().at("config");
    for (const json& s : summaries) {
        const json& c = s.at("config");
        if (c.at("tasks") != ref.at("tasks") || c.at("model") != ref.at("model") ||
            c.at("seeds") != ref.at("seeds")) {
            throw CompareError("summaries do not share a task suite (tasks/model/seeds differ)");
        }
    }

    CompareReport rep;
    for (const json& s : summaries) {
        MethodStats ms;
        ms.method = s.at("method").get<std::string>();
        const json& med = s.at("medians");
        ms.med_forgetting = med.at("avg_forgetting").get<double>();
        ms.med_final_avg_loss = med.at("final_avg_loss").get<double>();
        ms.med_final_task_loss = med.at("final_task_loss").get<double>();
        ms.med_fraction = med.at("trainable_fraction").get<double>();
        ms.runs = static_cast<int>(s.at("runs").size());
        rep.methods.push_back(std::move(ms));
    }

    auto check2 = [&rep](const std::string& name, const char* a, const char* b, auto rel) {
        OrderingCheck c;
        c.name = name;
        const MethodStats* sa = rep.find(a);
        const MethodStats* sb = rep.find(b);
        if (sa != nullptr && sb != nullptr) {
            c.applicable = true;
            c.passed = rel(*sa, *sb);
        }
        rep.checks.push_back(std::move(c));
    };
    auto by_forget = [](const MethodStats& a, const MethodStats& b) {
        return a.med_forgetting < b.med_forgetting;
    };
    check2("F_avg(o_lora) < F_avg(lwf)", "o_lora", "lwf", by_forget);
    check2("F_avg(lwf) < F_avg(seq_lora)", "lwf", "seq_lora", by_forget);
    check2("F_avg(o_lora) < F_avg(seq_ft)", "o_lora", "seq_ft", by_forget);
    check2("final_task(o_lora) <= 1.5 * final_task(mono)", "o_lora", "mono",
           [](const MethodStats& a, const MethodStats& b) {
               return a.med_final_task_loss <= 1.5 * b.med_final_task_loss;
           });
    auto by_fraction = [](const MethodStats& a, const MethodStats& b) {
        return a.med_fraction < b.med_fraction;
    };
    check2("fraction(o_adalora) < fraction(o_lora)", "o_adalora", "o_lora", by_fraction);
    check2("fraction(o_lora) < fraction(seq_ft)", "o_lora", "seq_ft", by_fraction);
    return rep;
}

/// Executes all runs of a config and persists everything: the resolved config
/// echo, per-run metrics CSVs and final-model checkpoints, the summary, and a
/// status file that flags partial outputs if the process dies mid-way.
inline json run_and_persist(const RunConfig& config, std::ostream* log = nullptr) {
    namespace fs = std::filesystem;
    config.validate();
    fs::create_directories(config.out_dir);
    const auto out = [&config](const std::string& name) {
        return (fs::path(config.out_dir) / name).string();
    };
    write_text_file(out("config.json"), config_to_json(config).dump(2) + "\n");
    write_text_file(out("status.json"), json{{"status", "running"}}.dump(2) + "\n");

    const Method method = parse_method(config.method);
    ExperimentResult result;
    result.config = config;
    try {
        for (int seed : config.seeds) {
            const auto t0 = std::chrono::steady_clock::now();
            ContinualRun run(config.model, config.tasks, method,
                             config.train, static_cast<std::uint64_t>(seed));
            RunArtifacts art;
            art.seed = seed;
            art.untrained_losses = run.evaluate_all();
            art.stages = run.run_all();
            art.forgetting = forgetting_report(art.stages);
            art.wall_clock_sec =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            const std::string tag = config.method + "_seed" + std::to_string(seed);
            write_metrics_csv(out("metrics_" + tag + ".csv"), art.stages);
            save_checkpoint(out("model_" + tag + ".json"), run.model());
            if (log != nullptr) {
                *log << tag << ": final_avg_loss " << art.forgetting.final_avg_loss
                     << ", avg_forgetting " << art.forgetting.average << "\n";
            }
            result.runs.push_back(std::move(art));
        }
    } catch (...) {
        write_text_file(out("status.json"),
                        json{{"status", "failed"},
                             {"completed_runs", result.runs.size()}}.dump(2) + "\n");
        throw;
    }
    json summary = summary_to_json(result);
    write_text_file(out("summary.json"), summary.dump(2) + "\n");
    write_text_file(out("status.json"),
                    json{{"status", "complete"},
                         {"completed_runs", result.runs.size()}}.dump(2) + "\n");
    return summary;
}

inline json load_summary(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read summary from " + path);
    return json::parse(in);
}

}  // namespace olora
