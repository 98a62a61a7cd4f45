#include "m3s/run_config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "m3s/error.hpp"

namespace m3s {

using nlohmann::json;

RunConfig RunConfig::professional() { return RunConfig{}; }

RunConfig RunConfig::abstract_style() {
    RunConfig cfg;
    cfg.guidance.omega2_max = 25.0;
    cfg.injection.lambda = 0.05;
    cfg.regulation.enabled = true;
    cfg.regulation.gamma = 60.0;
    return cfg;
}

RunConfig preset(const std::string& name) {
    if (name == "professional") return RunConfig::professional();
    if (name == "abstract") return RunConfig::abstract_style();
    throw ValidationError("preset", "unknown preset '" + name + "' (expected professional or abstract)");
}

void RunConfig::validate() const {
    if (steps < 1) throw ValidationError("steps", "must be >= 1");
    if (!(brighten_threshold > -1.0 && brighten_threshold <= 1.0)) {
        throw ValidationError("brighten_threshold", "must lie in (-1, 1]");
    }
    InjectionConfig{injection.lambda, injection.mode, {}}.validate();
    guidance.validate();
    regulation.validate();
    if (references.empty()) {
        if (injection.mode != InjectionMode::none) {
            throw ValidationError("injection.mode", "must be 'none' when no references are given");
        }
    } else {
        if (injection.mode == InjectionMode::kv_swap && references.size() != 1) {
            throw ValidationError("injection.mode", "kv_swap takes exactly one reference");
        }
        if (blend.enabled) blend_config(references.size()).validate();
    }
    if (injection.layers.policy == LayerPolicy::by_resolution) {
        for (const auto& [h, w] : injection.layers.resolutions) {
            if (h < 1 || w < 1) throw ValidationError("injection.layers.resolutions", "entries must be positive");
        }
    }
}

StyleBlendConfig RunConfig::blend_config(std::size_t num_refs) const {
    StyleBlendConfig b;
    b.active_window = blend.active_window;
    if (blend.eta.empty()) {
        b.eta.assign(num_refs, num_refs == 0 ? 0.0 : 1.0 / static_cast<double>(num_refs));
    } else {
        if (blend.eta.size() != num_refs) {
            throw ValidationError("blend.eta", "expected " + std::to_string(num_refs) + " weights, got " +
                                                   std::to_string(blend.eta.size()));
        }
        b.eta = blend.eta;
    }
    return b;
}

std::vector<std::filesystem::path> RunConfig::reference_paths() const {
    std::vector<std::filesystem::path> out;
    for (const std::string& r : references) {
        std::filesystem::path p(r);
        out.push_back(p.is_absolute() || base_dir.empty() ? p : base_dir / p);
    }
    return out;
}

namespace {

json window_json(const std::pair<double, double>& w) { return json::array({w.first, w.second}); }

json layers_json(const LayerSelection& s) {
    if (s.policy == LayerPolicy::explicit_ids) return {{"policy", "explicit"}, {"ids", s.layer_ids}};
    json res = json::array();
    for (const auto& [h, w] : s.resolutions) res.push_back({h, w});
    return {{"policy", "by_resolution"}, {"resolutions", res}};
}

// Field-by-field reader that rejects unknown keys.
class Reader {
public:
    Reader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
        if (!obj_.is_object()) throw ValidationError(path_.empty() ? "spec" : path_, "expected an object");
    }

    ~Reader() = default;

    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    const json* get(const std::string& key) {
        seen_.insert(key);
        const auto it = obj_.find(key);
        return it == obj_.end() ? nullptr : &*it;
    }

    template <typename T>
    void read(const std::string& key, T& out) {
        if (const json* v = get(key)) {
            try {
                out = v->get<T>();
            } catch (const json::exception&) {
                throw ValidationError(field(key), "wrong type: " + v->dump());
            }
            if constexpr (std::is_floating_point_v<T>) {
                if (!std::isfinite(out)) throw ValidationError(field(key), "must be finite");
            }
        }
    }

    void read_window(const std::string& key, std::pair<double, double>& out) {
        if (const json* v = get(key)) {
            if (!v->is_array() || v->size() != 2 || !(*v)[0].is_number() || !(*v)[1].is_number()) {
                throw ValidationError(field(key), "expected [start, end]");
            }
            out = {(*v)[0].get<double>(), (*v)[1].get<double>()};
        }
    }

    void finish() const {
        for (const auto& [key, value] : obj_.items()) {
            if (!seen_.contains(key)) throw ValidationError(field(key), "unknown key");
        }
    }

private:
    const json& obj_;
    std::string path_;
    std::set<std::string> seen_;
};

LayerSelection parse_layers(const json& j, LayerSelection base) {
    Reader r(j, "injection.layers");
    std::string policy = base.policy == LayerPolicy::explicit_ids ? "explicit" : "by_resolution";
    r.read("policy", policy);
    if (policy == "explicit") {
        base.policy = LayerPolicy::explicit_ids;
        r.read("ids", base.layer_ids);
        if (r.get("resolutions")) throw ValidationError("injection.layers.resolutions", "not used by the explicit policy");
    } else if (policy == "by_resolution") {
        base.policy = LayerPolicy::by_resolution;
        if (const json* res = r.get("resolutions")) {
            if (!res->is_array()) throw ValidationError("injection.layers.resolutions", "expected a list of [h, w]");
            base.resolutions.clear();
            for (const json& e : *res) {
                if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() || !e[1].is_number_integer()) {
                    throw ValidationError("injection.layers.resolutions", "expected [h, w] integer pairs");
                }
                base.resolutions.emplace_back(e[0].get<int>(), e[1].get<int>());
            }
        }
        if (r.get("ids")) throw ValidationError("injection.layers.ids", "not used by the by_resolution policy");
    } else {
        throw ValidationError("injection.layers.policy", "unknown policy '" + policy + "'");
    }
    r.finish();
    return base;
}

}  // namespace

json to_json(const RunConfig& cfg) {
    return {
        {"prompt", cfg.prompt},
        {"references", cfg.references},
        {"injection",
         {{"mode", to_string(cfg.injection.mode)},
          {"lambda", cfg.injection.lambda},
          {"layers", layers_json(cfg.injection.layers)}}},
        {"blend",
         {{"enabled", cfg.blend.enabled}, {"eta", cfg.blend.eta}, {"active_window", window_json(cfg.blend.active_window)}}},
        {"guidance",
         {{"omega1", cfg.guidance.omega1}, {"omega2", cfg.guidance.omega2_max}, {"ramp", to_string(cfg.guidance.ramp)}}},
        {"regulation",
         {{"enabled", cfg.regulation.enabled},
          {"gamma", cfg.regulation.gamma},
          {"clamp", cfg.regulation.clamp},
          {"window", window_json(cfg.regulation.window)}}},
        {"steps", cfg.steps},
        {"seed", cfg.seed},
        {"brighten_threshold", cfg.brighten_threshold},
        {"trace", cfg.trace},
    };
}

RunConfig run_config_from_json(const json& j, RunConfig cfg) {
    Reader top(j, "");
    top.read("prompt", cfg.prompt);
    top.read("references", cfg.references);
    if (const json* inj = top.get("injection")) {
        Reader r(*inj, "injection");
        std::string mode = to_string(cfg.injection.mode);
        r.read("mode", mode);
        cfg.injection.mode = parse_injection_mode(mode);
        r.read("lambda", cfg.injection.lambda);
        if (const json* layers = r.get("layers")) cfg.injection.layers = parse_layers(*layers, cfg.injection.layers);
        r.finish();
    }
    if (const json* blend = top.get("blend")) {
        Reader r(*blend, "blend");
        r.read("enabled", cfg.blend.enabled);
        r.read("eta", cfg.blend.eta);
        r.read_window("active_window", cfg.blend.active_window);
        r.finish();
    }
    if (const json* g = top.get("guidance")) {
        Reader r(*g, "guidance");
        r.read("omega1", cfg.guidance.omega1);
        r.read("omega2", cfg.guidance.omega2_max);
        std::string ramp = to_string(cfg.guidance.ramp);
        r.read("ramp", ramp);
        cfg.guidance.ramp = parse_guidance_ramp(ramp);
        r.finish();
    }
    if (const json* reg = top.get("regulation")) {
        Reader r(*reg, "regulation");
        r.read("enabled", cfg.regulation.enabled);
        r.read("gamma", cfg.regulation.gamma);
        r.read("clamp", cfg.regulation.clamp);
        r.read_window("window", cfg.regulation.window);
        r.finish();
    }
    top.read("steps", cfg.steps);
    top.read("seed", cfg.seed);
    top.read("brighten_threshold", cfg.brighten_threshold);
    top.read("trace", cfg.trace);
    top.finish();
    return cfg;
}

void apply_override(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ValidationError("--set", "expected key=value, got '" + assignment + "'");
    }
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;

    json* node = &doc;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ValidationError(key, "empty path component");
        if (!node->is_object()) throw ValidationError(key, "cannot descend into a non-object");
        if (dot == std::string::npos) {
            (*node)[part] = std::move(value);
            return;
        }
        node = &(*node)[part];
        if (node->is_null()) *node = json::object();
        start = dot + 1;
    }
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides,
                          RunConfig base) {
    std::ifstream is(path);
    if (!is) throw ValidationError("--spec", "cannot open run spec " + path.string());
    json doc = json::parse(is, nullptr, false);
    if (doc.is_discarded()) throw ValidationError("--spec", "run spec " + path.string() + " is not valid JSON");
    for (const std::string& o : overrides) apply_override(doc, o);
    RunConfig cfg = run_config_from_json(doc, std::move(base));
    cfg.base_dir = path.parent_path();
    cfg.validate();
    return cfg;
}

}  // namespace m3s
