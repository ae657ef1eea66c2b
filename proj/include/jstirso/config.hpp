#pragma once

// Experiment configuration and its JSON form. Missing keys keep their
// defaults; unknown keys and out-of-range values raise ConfigError naming
// the field.

#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "jstirso/optimizer.hpp"

namespace jstirso {

using json = nlohmann::ordered_json;

enum class Diagnostics { metrics_only, full_regret };

struct TrackerSpec {
    std::string label;
    Algorithm algorithm = Algorithm::jstirso;
    TrackerConfig config;
};

struct ExperimentConfig {
    ScenarioConfig scenario;
    std::vector<TrackerSpec> trackers;
    Index mc_runs = 50;
    bool redraw_graph_per_run = true;
    Diagnostics diagnostics = Diagnostics::metrics_only;
    std::string output_dir = "out";
    std::uint64_t base_seed = 1;
    /// 0 means one worker per hardware thread.
    Index workers = 0;
    bool write_traces = false;

    void validate() const;
};

/// Scenario and tracker settings used for the comparison runs.
inline ExperimentConfig default_experiment_config() {
    ExperimentConfig c;
    TrackerConfig base;
    base.step_rule = StepRule::scaled_by_L;
    base.alpha_scale = 0.1;
    base.gamma = 0.99;
    base.sigma2_init = 0.01;
    base.alpha = 0.1;

    // For jstiso, gamma only enters the step-size calibration.
    TrackerConfig jstiso = base;
    jstiso.gamma = 0.0;
    jstiso.lambda = 3e-4;
    jstiso.nu = 30.0;
    TrackerConfig jstirso = base;
    jstirso.lambda = 5e-4;
    jstirso.nu = 30.0;
    TrackerConfig naive = jstirso;
    c.trackers = {{"jstiso", Algorithm::jstiso, jstiso},
                  {"jstirso", Algorithm::jstirso, jstirso},
                  {"naive_tirso", Algorithm::naive_tirso, naive}};
    return c;
}

// ---------------------------------------------------------------------------

namespace detail {

template <class E>
struct EnumNames;

template <>
struct EnumNames<Algorithm> {
    static constexpr std::pair<Algorithm, const char*> items[] = {
        {Algorithm::jstiso, "jstiso"}, {Algorithm::jstirso, "jstirso"}, {Algorithm::naive_tirso, "naive_tirso"}};
};
template <>
struct EnumNames<StepRule> {
    static constexpr std::pair<StepRule, const char*> items[] = {{StepRule::fixed, "fixed"},
                                                                 {StepRule::scaled_by_L, "scaled_by_L"}};
};
template <>
struct EnumNames<AccumulatorSource> {
    static constexpr std::pair<AccumulatorSource, const char*> items[] = {
        {AccumulatorSource::reconstruction, "reconstruction"}, {AccumulatorSource::observation, "observation"}};
};
template <>
struct EnumNames<Diagnostics> {
    static constexpr std::pair<Diagnostics, const char*> items[] = {{Diagnostics::metrics_only, "metrics_only"},
                                                                    {Diagnostics::full_regret, "full_regret"}};
};

template <class E>
std::string enum_name(E e) {
    for (const auto& [v, s] : EnumNames<E>::items) {
        if (v == e) return s;
    }
    return "?";
}

template <class E>
E enum_value(const json& j, const std::string& field) {
    if (!j.is_string()) throw ConfigError(field, "expected a string");
    const auto s = j.get<std::string>();
    std::string allowed;
    for (const auto& [v, name] : EnumNames<E>::items) {
        if (s == name) return v;
        allowed += allowed.empty() ? name : std::string(", ") + name;
    }
    throw ConfigError(field, "unknown value '" + s + "' (expected one of " + allowed + ")");
}

/// Reads fields of one JSON object and rejects keys nobody asked for.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
    }

    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        const json& v = j_.at(key);
        try {
            if constexpr (std::is_same_v<T, bool>) {
                if (!v.is_boolean()) throw ConfigError(name(key), "expected a boolean");
            } else if constexpr (std::is_integral_v<T>) {
                if (!v.is_number_integer()) throw ConfigError(name(key), "expected an integer");
            } else if constexpr (std::is_floating_point_v<T>) {
                if (!v.is_number()) throw ConfigError(name(key), "expected a number");
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v.is_string()) throw ConfigError(name(key), "expected a string");
            }
            out = v.get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(name(key), e.what());
        }
    }

    template <class E>
    void get_enum(const char* key, E& out) {
        seen_.insert(key);
        if (j_.contains(key)) out = enum_value<E>(j_.at(key), name(key));
    }

    const json* child(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    void finish() const {
        for (const auto& [k, v] : j_.items()) {
            if (!seen_.count(k)) throw ConfigError(name(k.c_str()), "unknown configuration key");
        }
    }

    std::string name(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

inline void check(bool ok, const std::string& field, const std::string& what) {
    if (!ok) throw ConfigError(field, what);
}

} // namespace detail

inline json to_json(const ScenarioConfig& s) {
    return json{{"N", s.N},
                {"P", s.P},
                {"T", s.T},
                {"sigma_u", s.sigma_u},
                {"sigma_eps", s.sigma_eps},
                {"rho", s.rho},
                {"p_e", s.p_e},
                {"change_points", s.change_points},
                {"target_radius", s.target_radius},
                {"seed", s.seed}};
}

inline json to_json(const TrackerSpec& t) {
    const TrackerConfig& c = t.config;
    return json{{"label", t.label},
                {"algorithm", detail::enum_name(t.algorithm)},
                {"alpha", c.alpha},
                {"lambda", c.lambda},
                {"nu", c.nu},
                {"gamma", c.gamma},
                {"sigma2_init", c.sigma2_init},
                {"step_rule", detail::enum_name(c.step_rule)},
                {"alpha_scale", c.alpha_scale},
                {"r_update_source", detail::enum_name(c.r_update_source)},
                {"regressor_source", detail::enum_name(c.regressor_source)}};
}

inline json to_json(const ExperimentConfig& c) {
    json trackers = json::array();
    for (const auto& t : c.trackers) trackers.push_back(to_json(t));
    return json{{"scenario", to_json(c.scenario)},
                {"trackers", trackers},
                {"mc_runs", c.mc_runs},
                {"redraw_graph_per_run", c.redraw_graph_per_run},
                {"diagnostics", detail::enum_name(c.diagnostics)},
                {"output_dir", c.output_dir},
                {"base_seed", c.base_seed},
                {"workers", c.workers},
                {"write_traces", c.write_traces}};
}

inline ScenarioConfig scenario_from_json(const json& j, const std::string& path = "scenario",
                                         ScenarioConfig s = {}) {
    detail::ObjectReader r(j, path);
    r.get("N", s.N);
    r.get("P", s.P);
    r.get("T", s.T);
    r.get("sigma_u", s.sigma_u);
    r.get("sigma_eps", s.sigma_eps);
    r.get("rho", s.rho);
    r.get("p_e", s.p_e);
    if (const json* cp = r.child("change_points")) {
        if (!cp->is_array()) throw ConfigError(r.name("change_points"), "expected an array of integers");
        s.change_points.clear();
        for (const auto& v : *cp) {
            if (!v.is_number_integer()) throw ConfigError(r.name("change_points"), "expected integers");
            s.change_points.push_back(v.get<Index>());
        }
    }
    r.get("target_radius", s.target_radius);
    r.get("seed", s.seed);
    r.finish();
    try {
        s.validate();
    } catch (const ParameterError& e) {
        std::string msg = e.what();
        const auto dot = msg.find(' ');
        throw ConfigError(msg.substr(0, dot), msg.substr(dot == std::string::npos ? 0 : dot + 1));
    }
    return s;
}

inline TrackerSpec tracker_from_json(const json& j, const std::string& path) {
    TrackerSpec t;
    detail::ObjectReader r(j, path);
    r.get_enum("algorithm", t.algorithm);
    t.label = to_string(t.algorithm);
    r.get("label", t.label);
    TrackerConfig& c = t.config;
    c.step_rule = StepRule::scaled_by_L;
    r.get("alpha", c.alpha);
    r.get("lambda", c.lambda);
    r.get("nu", c.nu);
    r.get("gamma", c.gamma);
    r.get("sigma2_init", c.sigma2_init);
    r.get_enum("step_rule", c.step_rule);
    r.get("alpha_scale", c.alpha_scale);
    r.get_enum("r_update_source", c.r_update_source);
    r.get_enum("regressor_source", c.regressor_source);
    r.finish();
    detail::check(!t.label.empty(), r.name("label"), "must not be empty");
    detail::check(c.alpha > 0.0, r.name("alpha"), "must be > 0");
    detail::check(c.lambda >= 0.0, r.name("lambda"), "must be >= 0");
    detail::check(c.nu > 0.0, r.name("nu"), "must be > 0");
    detail::check(c.gamma >= 0.0 && c.gamma < 1.0, r.name("gamma"), "must lie in [0, 1)");
    detail::check(c.sigma2_init >= 0.0, r.name("sigma2_init"), "must be >= 0");
    detail::check(c.alpha_scale > 0.0, r.name("alpha_scale"), "must be > 0");
    return t;
}

inline void ExperimentConfig::validate() const {
    const json j = to_json(*this);
    (void)scenario_from_json(j.at("scenario"));
    detail::check(!trackers.empty(), "trackers", "at least one tracker is required");
    std::set<std::string> labels;
    for (std::size_t i = 0; i < trackers.size(); ++i) {
        const std::string path = "trackers[" + std::to_string(i) + "]";
        (void)tracker_from_json(j.at("trackers").at(i), path);
        detail::check(labels.insert(trackers[i].label).second, path + ".label", "labels must be unique");
        detail::check(trackers[i].label.find_first_of(",\"\n") == std::string::npos, path + ".label",
                      "must not contain commas, quotes or newlines");
    }
    detail::check(mc_runs >= 1, "mc_runs", "must be >= 1");
    detail::check(workers >= 0, "workers", "must be >= 0");
    detail::check(!output_dir.empty(), "output_dir", "must not be empty");
}

inline ExperimentConfig experiment_from_json(const json& j) {
    ExperimentConfig c = default_experiment_config();
    detail::ObjectReader r(j, "");
    if (const json* s = r.child("scenario")) c.scenario = scenario_from_json(*s, "scenario", c.scenario);
    if (const json* t = r.child("trackers")) {
        if (!t->is_array()) throw ConfigError("trackers", "expected an array");
        c.trackers.clear();
        for (std::size_t i = 0; i < t->size(); ++i) {
            c.trackers.push_back(tracker_from_json(t->at(i), "trackers[" + std::to_string(i) + "]"));
        }
    }
    r.get("mc_runs", c.mc_runs);
    r.get("redraw_graph_per_run", c.redraw_graph_per_run);
    r.get_enum("diagnostics", c.diagnostics);
    r.get("output_dir", c.output_dir);
    r.get("base_seed", c.base_seed);
    r.get("workers", c.workers);
    r.get("write_traces", c.write_traces);
    r.finish();
    c.validate();
    return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path, "cannot open configuration file");
    json j;
    try {
        j = json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path, e.what());
    }
    return experiment_from_json(j);
}

inline std::string dump_config(const ExperimentConfig& c) { return to_json(c).dump(2) + "\n"; }

} // namespace jstirso
