#include "agepop/scenario.hpp"

#include "agepop/errors.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace agepop {

using nlohmann::json;

namespace {

// Reads the fields of one JSON object, recording problems instead of throwing so that a
// single pass reports everything that is wrong with a file.
class Fields {
public:
    Fields(const json& j, std::string path, std::vector<std::string>& errors)
        : j_(j), path_(std::move(path)), errors_(errors) {
        if (!j_.is_object()) fail("", "must be an object");
    }

    bool ok() const { return j_.is_object(); }
    bool has(const char* key) const { return ok() && j_.contains(key) && !j_.at(key).is_null(); }
    const json& at(const char* key) const { return j_.at(key); }
    std::string where(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

    void fail(const char* key, const std::string& what) const {
        const std::string p = *key ? where(key) : path_;
        errors_.push_back((p.empty() ? std::string("scenario") : p) + ": " + what);
    }

    std::optional<double> number(const char* key) const {
        if (!has(key)) return std::nullopt;
        if (!at(key).is_number()) {
            fail(key, "must be a number");
            return std::nullopt;
        }
        return at(key).get<double>();
    }

    double number(const char* key, double fallback) const { return number(key).value_or(fallback); }

    double required_number(const char* key) const {
        if (!has(key)) {
            fail(key, "is required");
            return 0.0;
        }
        return number(key).value_or(0.0);
    }

    std::optional<long long> integer(const char* key) const {
        if (!has(key)) return std::nullopt;
        if (!at(key).is_number_integer()) {
            fail(key, "must be an integer");
            return std::nullopt;
        }
        return at(key).get<long long>();
    }

    std::optional<std::string> string(const char* key) const {
        if (!has(key)) return std::nullopt;
        if (!at(key).is_string()) {
            fail(key, "must be a string");
            return std::nullopt;
        }
        return at(key).get<std::string>();
    }

    std::optional<bool> boolean(const char* key) const {
        if (!has(key)) return std::nullopt;
        if (!at(key).is_boolean()) {
            fail(key, "must be true or false");
            return std::nullopt;
        }
        return at(key).get<bool>();
    }

    std::vector<double> numbers(const char* key) const {
        std::vector<double> out;
        if (!has(key)) return out;
        if (!at(key).is_array()) {
            fail(key, "must be an array of numbers");
            return out;
        }
        for (const auto& v : at(key)) {
            if (!v.is_number()) {
                fail(key, "must be an array of numbers");
                return {};
            }
            out.push_back(v.get<double>());
        }
        return out;
    }

    void reject_unknown(std::initializer_list<const char*> known) const {
        if (!ok()) return;
        const std::set<std::string> allowed(known.begin(), known.end());
        for (const auto& [k, v] : j_.items())
            if (!allowed.contains(k)) errors_.push_back(where(k.c_str()) + ": unknown field");
    }

private:
    const json& j_;
    std::string path_;
    std::vector<std::string>& errors_;
};

std::optional<KernelForm> parse_kernel(const json& j, const std::string& path, std::vector<std::string>& errors) {
    if (j.is_number()) return ConstantForm{j.get<double>()};
    Fields f(j, path, errors);
    if (!f.ok()) return std::nullopt;
    const auto type = f.string("type");
    if (!type) {
        f.fail("type", "is required (constant, window, gaussian, exponential or sampled)");
        return std::nullopt;
    }
    if (*type == "constant") {
        f.reject_unknown({"type", "value"});
        return ConstantForm{f.required_number("value")};
    }
    if (*type == "window") {
        f.reject_unknown({"type", "lo", "hi", "height"});
        WindowForm w{f.required_number("lo"), f.required_number("hi"), f.required_number("height")};
        if (w.hi < w.lo) f.fail("hi", "must not be below lo");
        return w;
    }
    if (*type == "gaussian") {
        f.reject_unknown({"type", "center", "width", "height"});
        GaussianBumpForm b{f.required_number("center"), f.required_number("width"), f.required_number("height")};
        if (!(b.width > 0.0)) f.fail("width", "must be positive");
        return b;
    }
    if (*type == "exponential") {
        f.reject_unknown({"type", "height", "rate"});
        return ExponentialForm{f.required_number("height"), f.required_number("rate")};
    }
    if (*type == "sampled") {
        f.reject_unknown({"type", "values"});
        if (!f.has("values")) f.fail("values", "is required");
        return SampledForm{f.numbers("values")};
    }
    f.fail("type", "unknown kernel type '" + *type + "'");
    return std::nullopt;
}

json kernel_json(const KernelForm& k) {
    return std::visit(
        [](const auto& f) -> json {
            using F = std::decay_t<decltype(f)>;
            if constexpr (std::is_same_v<F, ConstantForm>)
                return {{"type", "constant"}, {"value", f.value}};
            else if constexpr (std::is_same_v<F, WindowForm>)
                return {{"type", "window"}, {"lo", f.lo}, {"hi", f.hi}, {"height", f.height}};
            else if constexpr (std::is_same_v<F, GaussianBumpForm>)
                return {{"type", "gaussian"}, {"center", f.center}, {"width", f.width}, {"height", f.height}};
            else if constexpr (std::is_same_v<F, ExponentialForm>)
                return {{"type", "exponential"}, {"height", f.height}, {"rate", f.rate}};
            else
                return {{"type", "sampled"}, {"values", f.values}};
        },
        k);
}

std::optional<TimeFunction> parse_time_function(const json& j, const std::string& path,
                                                std::vector<std::string>& errors) {
    if (j.is_number()) return ConstantFn{j.get<double>()};
    Fields f(j, path, errors);
    if (!f.ok()) return std::nullopt;
    const auto type = f.string("type");
    if (type == "constant") {
        f.reject_unknown({"type", "value"});
        return ConstantFn{f.required_number("value")};
    }
    if (type == "periodic") {
        f.reject_unknown({"type", "mean", "amplitude", "period", "phase"});
        PeriodicFn p{f.required_number("mean"), f.required_number("amplitude"), f.required_number("period"),
                     f.number("phase", 0.0)};
        if (!(p.period > 0.0)) f.fail("period", "must be positive");
        return p;
    }
    if (type == "sampled") {
        f.reject_unknown({"type", "times", "values"});
        SampledFn s{f.numbers("times"), f.numbers("values")};
        if (s.times.empty() || s.times.size() != s.values.size())
            f.fail("times", "must be nonempty and match values in length");
        for (std::size_t k = 1; k < s.times.size(); ++k)
            if (!(s.times[k] > s.times[k - 1])) {
                f.fail("times", "must be strictly increasing");
                break;
            }
        return s;
    }
    f.fail("type", "must be constant, periodic or sampled");
    return std::nullopt;
}

json time_function_json(const TimeFunction& tf) {
    return std::visit(
        [](const auto& f) -> json {
            using F = std::decay_t<decltype(f)>;
            if constexpr (std::is_same_v<F, ConstantFn>)
                return {{"type", "constant"}, {"value", f.value}};
            else if constexpr (std::is_same_v<F, PeriodicFn>)
                return {{"type", "periodic"}, {"mean", f.mean}, {"amplitude", f.amplitude}, {"period", f.period},
                        {"phase", f.phase}};
            else
                return {{"type", "sampled"}, {"times", f.times}, {"values", f.values}};
        },
        tf);
}

// Reads a kernel field; a missing required kernel is reported under its full path.
void read_kernel(const Fields& f, const char* key, bool required, KernelForm& out,
                 std::vector<std::string>& errors) {
    if (!f.has(key)) {
        if (required) f.fail(key, "missing kernel");
        return;
    }
    if (auto k = parse_kernel(f.at(key), f.where(key), errors)) out = std::move(*k);
}

void check_kernel_on_grid(const KernelForm& k, const std::optional<AgeGrid>& grid, const std::string& path,
                          std::vector<std::string>& errors) {
    if (!grid) return;
    if (const auto* s = std::get_if<SampledForm>(&k); s && s->values.size() != grid->nodes()) {
        errors.push_back(path + ": sampled kernel has " + std::to_string(s->values.size()) + " values, the grid has " +
                         std::to_string(grid->nodes()) + " nodes");
        return;
    }
    if (!make_kernel(*grid, k).nonnegative()) errors.push_back(path + ": kernel takes negative values");
}

void parse_species(const json& arr, Scenario& s, bool needs_interaction, std::vector<std::string>& errors) {
    if (!arr.is_array()) {
        errors.push_back("species: must be an array");
        return;
    }
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const std::string path = "species[" + std::to_string(i) + "]";
        Fields f(arr[i], path, errors);
        if (!f.ok()) continue;
        f.reject_unknown({"name", "mortality", "fertility", "interaction", "max_age", "r0"});
        SpeciesConfig c;
        c.name = f.string("name").value_or("species" + std::to_string(i + 1));
        read_kernel(f, "mortality", true, c.mortality, errors);
        read_kernel(f, "fertility", true, c.fertility, errors);
        read_kernel(f, "interaction", needs_interaction, c.interaction, errors);
        c.max_age = f.number("max_age");
        c.r0 = f.number("r0");
        if (c.r0 && !(*c.r0 > 0.0)) f.fail("r0", "must be positive");
        s.species.push_back(std::move(c));
    }
}

void parse_controller(const json& j, Scenario& s, std::vector<std::string>& errors) {
    Fields f(j, "controller", errors);
    if (!f.ok()) return;
    f.reject_unknown({"u_star", "theta", "terminal_gain", "gains", "u_max", "eps_z"});
    ControllerSettings c;
    c.u_star = f.required_number("u_star");
    c.theta = f.number("theta", 1.0);
    c.terminal_gain = f.number("terminal_gain", 1.0);
    c.gains = f.numbers("gains");
    c.u_max = f.number("u_max");
    c.eps_z = f.number("eps_z", 1e-9);
    if (!(c.u_star > 0.0)) f.fail("u_star", "must be positive");
    if (!(c.theta > 0.0)) f.fail("theta", "must be positive");
    if (!(c.terminal_gain > 0.0)) f.fail("terminal_gain", "must be positive");
    for (double g : c.gains)
        if (!(g > 0.0)) {
            f.fail("gains", "must all be positive");
            break;
        }
    if (c.u_max && !(*c.u_max > 0.0)) f.fail("u_max", "must be positive");
    if (!(c.eps_z > 0.0)) f.fail("eps_z", "must be positive");
    s.controller = std::move(c);
}

void parse_initial(const json& j, Scenario& s, std::vector<std::string>& errors) {
    Fields f(j, "initial", errors);
    if (!f.ok()) return;
    f.reject_unknown({"type", "scales", "scale", "noise", "profiles"});
    const auto type = f.string("type").value_or("");
    if (type == "equilibrium") {
        s.initial.kind = InitialRecipe::Kind::equilibrium;
        s.initial.scales = f.numbers("scales");
        if (auto one = f.number("scale")) s.initial.scales = {*one};
        if (s.initial.scales.empty()) s.initial.scales = {1.0};
        for (double v : s.initial.scales)
            if (!(v > 0.0)) {
                f.fail("scales", "must be positive");
                break;
            }
        s.initial.noise = f.number("noise", 0.0);
        if (!(s.initial.noise >= 0.0 && s.initial.noise < 1.0)) f.fail("noise", "must lie in [0, 1)");
    } else if (type == "profiles") {
        s.initial.kind = InitialRecipe::Kind::profiles;
        if (!f.has("profiles") || !f.at("profiles").is_array()) {
            f.fail("profiles", "must be an array of kernels");
            return;
        }
        const auto& arr = f.at("profiles");
        for (std::size_t i = 0; i < arr.size(); ++i)
            if (auto k = parse_kernel(arr[i], "initial.profiles[" + std::to_string(i) + "]", errors))
                s.initial.profiles.push_back(std::move(*k));
    } else {
        f.fail("type", "must be 'equilibrium' or 'profiles'");
    }
}

void parse_network(const Fields& top, Scenario& s, std::vector<std::string>& errors) {
    if (!top.has("network")) {
        top.fail("network", "is required for general-network scenarios");
        return;
    }
    Fields f(top.at("network"), "network", errors);
    if (!f.ok()) return;
    f.reject_unknown({"adjacency", "links", "control_placement", "control"});
    if (f.has("adjacency")) {
        const auto& adj = f.at("adjacency");
        bool good = adj.is_array();
        if (good)
            for (const auto& row : adj) {
                if (!row.is_array()) {
                    good = false;
                    break;
                }
                std::vector<int> r;
                for (const auto& v : row) {
                    if (!v.is_number_integer()) good = false;
                    else r.push_back(v.get<int>());
                }
                s.adjacency.push_back(std::move(r));
            }
        if (!good) f.fail("adjacency", "must be a matrix of 0/1 integers");
        for (const auto& row : s.adjacency)
            if (row.size() != s.adjacency.size()) {
                f.fail("adjacency", "must be square");
                break;
            }
    } else {
        f.fail("adjacency", "is required");
    }
    if (f.has("links")) {
        const auto& links = f.at("links");
        if (!links.is_array()) f.fail("links", "must be an array");
        else
            for (std::size_t k = 0; k < links.size(); ++k) {
                Fields l(links[k], "network.links[" + std::to_string(k) + "]", errors);
                if (!l.ok()) continue;
                l.reject_unknown({"prey", "predator", "kernel"});
                InteractionLink link;
                const auto prey = l.integer("prey"), pred = l.integer("predator");
                if (!prey || *prey < 0) l.fail("prey", "must be a species index");
                if (!pred || *pred < 0) l.fail("predator", "must be a species index");
                link.prey = static_cast<std::size_t>(prey.value_or(0));
                link.predator = static_cast<std::size_t>(pred.value_or(0));
                read_kernel(l, "kernel", true, link.kernel, errors);
                s.links.push_back(std::move(link));
            }
    }
    if (f.has("control_placement") && f.at("control_placement").is_array())
        for (const auto& v : f.at("control_placement")) s.control_placement.push_back(v.is_number_integer() ? v.get<int>() : -1);
    s.open_loop_control = f.number("control", 0.0);
    if (!(s.open_loop_control >= 0.0)) f.fail("control", "must be nonnegative");
}

void parse_mosquito(const Fields& top, Scenario& s, std::vector<std::string>& errors) {
    if (!top.has("mosquito")) {
        top.fail("mosquito", "is required for mosquito scenarios");
        return;
    }
    Fields f(top.at("mosquito"), "mosquito", errors);
    if (!f.ok()) return;
    f.reject_unknown({"mu0", "mu1", "mu_F", "mu_M", "mu_Fj", "mu_Fa", "mu_Ms", "emergence", "male_weight", "beta0",
                      "tau", "r", "iota", "delta", "K", "Gamma", "gamma", "releases", "release_cells", "strategy",
                      "P_star", "initial_scale", "uncontrolled_twin"});
    const bool genetic = s.kind == ModelKind::mosquito_genetic;
    MosquitoConfig m;
    read_kernel(f, "mu0", true, m.mu0, errors);
    read_kernel(f, "mu1", true, m.mu1, errors);
    read_kernel(f, "mu_F", true, m.mu_F, errors);
    read_kernel(f, "mu_M", true, m.mu_M, errors);
    for (const char* key : {"mu_Fj", "mu_Fa"})
        if (f.has(key)) {
            KernelForm k = ConstantForm{0.0};
            read_kernel(f, key, false, k, errors);
            (std::string(key) == "mu_Fj" ? m.mu_Fj : m.mu_Fa) = std::move(k);
        }
    read_kernel(f, "mu_Ms", genetic, m.mu_Ms, errors);
    read_kernel(f, "emergence", true, m.emergence, errors);
    read_kernel(f, "male_weight", true, m.male_weight, errors);
    read_kernel(f, "beta0", true, m.beta0, errors);
    m.tau = f.required_number("tau");
    m.r = f.number("r", 0.5);
    m.iota = f.required_number("iota");
    m.delta = f.number("delta", 1.0);
    for (auto [key, target] : {std::pair{"K", &m.K}, std::pair{"Gamma", &m.Gamma}, std::pair{"gamma", &m.gamma}}) {
        if (!f.has(key)) {
            f.fail(key, "is required");
            continue;
        }
        if (auto tf = parse_time_function(f.at(key), f.where(key), errors)) *target = std::move(*tf);
    }
    if (f.has("releases")) {
        const auto& rel = f.at("releases");
        if (!rel.is_array()) f.fail("releases", "must be an array");
        else
            for (std::size_t k = 0; k < rel.size(); ++k) {
                Fields r(rel[k], "mosquito.releases[" + std::to_string(k) + "]", errors);
                if (!r.ok()) continue;
                r.reject_unknown({"t", "alpha"});
                m.releases.push_back({r.required_number("t"), r.required_number("alpha")});
            }
    }
    if (auto cells = f.integer("release_cells")) {
        if (*cells < 1) f.fail("release_cells", "must be at least 1");
        else m.release_cells = static_cast<std::size_t>(*cells);
    }
    if (auto name = f.string("strategy")) {
        try {
            m.strategy = parse_strategy(*name);
        } catch (const ConfigError& e) {
            f.fail("strategy", e.what());
        }
    } else {
        m.strategy = genetic ? Strategy::genetic : Strategy::bio;
    }
    if (genetic != (m.strategy == Strategy::genetic))
        f.fail("strategy", genetic ? "mosquito-genetic scenarios use the 'genetic' strategy"
                                   : "the 'genetic' strategy needs a mosquito-genetic scenario");
    m.P_star = f.required_number("P_star");
    if (!(m.P_star > 0.0)) f.fail("P_star", "must be positive");
    m.initial_scale = f.number("initial_scale", 1.5);
    if (!(m.initial_scale > 0.0)) f.fail("initial_scale", "must be positive");
    m.uncontrolled_twin = f.boolean("uncontrolled_twin").value_or(true);
    s.mosquito = std::move(m);
}

void parse_tolerances(const json& j, Scenario& s, std::vector<std::string>& errors) {
    Fields f(j, "tolerances", errors);
    if (!f.ok()) return;
    f.reject_unknown({"positivity", "lyapunov_slack", "oracle_l1", "sign_floor", "tail_norm", "r0_critical",
                      "convergence_l1"});
    Tolerances& t = s.tolerances;
    t.positivity = f.number("positivity", t.positivity);
    t.lyapunov_slack = f.number("lyapunov_slack", t.lyapunov_slack);
    t.oracle_l1 = f.number("oracle_l1", t.oracle_l1);
    t.sign_floor = f.number("sign_floor", t.sign_floor);
    t.tail_norm = f.number("tail_norm", t.tail_norm);
    t.r0_critical = f.number("r0_critical", t.r0_critical);
    s.convergence_l1 = f.number("convergence_l1", s.convergence_l1);
    for (double v : {t.positivity, t.lyapunov_slack, t.oracle_l1, t.sign_floor, t.tail_norm, t.r0_critical,
                     s.convergence_l1})
        if (!(v >= 0.0)) {
            f.fail("", "tolerances must be nonnegative");
            break;
        }
}

// Checks that need the grid and the assembled model objects.
void cross_check(const Scenario& s, std::vector<std::string>& errors) {
    std::optional<AgeGrid> grid;
    if (s.max_age > 0.0 && s.cells > 0) grid.emplace(s.max_age, s.cells);
    if (!grid) return;

    for (std::size_t i = 0; i < s.species.size(); ++i) {
        const std::string p = "species[" + std::to_string(i) + "]";
        check_kernel_on_grid(s.species[i].mortality, grid, p + ".mortality", errors);
        check_kernel_on_grid(s.species[i].fertility, grid, p + ".fertility", errors);
        check_kernel_on_grid(s.species[i].interaction, grid, p + ".interaction", errors);
        if (const auto& a = s.species[i].max_age; a && !(*a > 0.0 && *a <= s.max_age))
            errors.push_back(p + ".max_age: must lie in (0, grid.max_age]");
    }
    for (std::size_t k = 0; k < s.links.size(); ++k)
        check_kernel_on_grid(s.links[k].kernel, grid, "network.links[" + std::to_string(k) + "].kernel", errors);
    for (std::size_t k = 0; k < s.initial.profiles.size(); ++k)
        check_kernel_on_grid(s.initial.profiles[k], grid, "initial.profiles[" + std::to_string(k) + "]", errors);

    const std::size_t rows = s.species.size();
    if (s.kind != ModelKind::mosquito_bio && s.kind != ModelKind::mosquito_genetic) {
        if (s.initial.kind == InitialRecipe::Kind::profiles && s.initial.profiles.size() != rows)
            errors.push_back("initial.profiles: expected " + std::to_string(rows) + " profiles, got " +
                             std::to_string(s.initial.profiles.size()));
        if (s.initial.kind == InitialRecipe::Kind::equilibrium) {
            if (s.kind != ModelKind::cyclic)
                errors.push_back("initial: equilibrium initial data needs a cyclic scenario");
            else if (s.initial.scales.size() != 1 && s.initial.scales.size() != rows)
                errors.push_back("initial.scales: give one scale or one per species");
        }
    }

    if (errors.empty() && (s.kind == ModelKind::general_network || s.kind == ModelKind::cyclic ||
                           s.kind == ModelKind::linear_demographic)) {
        try {
            build_network(s).validate();
        } catch (const ValidationError& e) {
            for (const auto& p : e.problems()) errors.push_back("network: " + p);
        } catch (const std::exception& e) {
            errors.push_back(std::string("species: ") + e.what());
        }
    }
    if (errors.empty() && s.mosquito) {
        try {
            build_mosquito(s).validate();
        } catch (const ValidationError& e) {
            for (const auto& p : e.problems()) errors.push_back("mosquito: " + p);
        } catch (const std::exception& e) {
            errors.push_back(std::string("mosquito: ") + e.what());
        }
    }
}

}  // namespace

KindName parse_kind(const std::string& name) {
    if (name == "linear-demographic") return {ModelKind::linear_demographic};
    if (name == "general-network") return {ModelKind::general_network};
    if (name == "mosquito-bio") return {ModelKind::mosquito_bio};
    if (name == "mosquito-genetic") return {ModelKind::mosquito_genetic};
    if (name.rfind("cyclic-", 0) == 0) {
        const std::string digits = name.substr(7);
        if (!digits.empty() && digits.find_first_not_of("0123456789") == std::string::npos && digits.size() < 4) {
            const int n = std::stoi(digits);
            if (n >= 2) return {ModelKind::cyclic, n};
        }
    }
    throw ConfigError("unknown model kind '" + name + "'");
}

std::string kind_name(ModelKind kind, std::size_t species) {
    switch (kind) {
    case ModelKind::linear_demographic: return "linear-demographic";
    case ModelKind::cyclic: return "cyclic-" + std::to_string(species);
    case ModelKind::general_network: return "general-network";
    case ModelKind::mosquito_bio: return "mosquito-bio";
    case ModelKind::mosquito_genetic: return "mosquito-genetic";
    }
    return "unknown";
}

Scenario parse_scenario(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text.begin(), text.end(), nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw ValidationError({std::string("parse error: ") + e.what()});
    }

    std::vector<std::string> errors;
    Scenario s;
    Fields top(doc, "", errors);
    if (!top.ok()) throw ValidationError(errors);
    top.reject_unknown({"schema_version", "name", "kind", "grid", "horizon", "seed", "species", "network", "controller",
                        "initial", "mosquito", "output", "tolerances"});

    if (const auto v = top.integer("schema_version"); !v)
        top.fail("schema_version", "is required");
    else if (*v != kSchemaVersion)
        top.fail("schema_version", "is " + std::to_string(*v) + ", this build reads version " +
                                       std::to_string(kSchemaVersion));
    s.name = top.string("name").value_or("");

    int cyclic_n = 0;
    if (const auto k = top.string("kind")) {
        try {
            const auto kn = parse_kind(*k);
            s.kind = kn.kind;
            cyclic_n = kn.species;
        } catch (const ConfigError& e) {
            top.fail("kind", e.what());
        }
    } else {
        top.fail("kind", "is required");
    }

    if (top.has("grid")) {
        Fields g(top.at("grid"), "grid", errors);
        g.reject_unknown({"max_age", "cells"});
        s.max_age = g.required_number("max_age");
        const auto cells = g.integer("cells");
        if (!cells) g.fail("cells", "is required");
        s.cells = static_cast<int>(cells.value_or(0));
        if (!(s.max_age > 0.0)) g.fail("max_age", "must be positive");
        if (s.cells < 1) g.fail("cells", "must be at least 1");
    } else {
        top.fail("grid", "is required");
        s.max_age = 0.0;
        s.cells = 0;
    }
    s.horizon = top.required_number("horizon");
    if (!(s.horizon > 0.0)) top.fail("horizon", "must be positive");
    if (const auto seed = top.integer("seed")) {
        if (*seed < 0) top.fail("seed", "must be nonnegative");
        s.seed = static_cast<std::uint64_t>(*seed);
    }

    const bool mosquito = s.kind == ModelKind::mosquito_bio || s.kind == ModelKind::mosquito_genetic;
    if (mosquito) {
        if (top.has("species")) top.fail("species", "is not used by mosquito scenarios");
        parse_mosquito(top, s, errors);
    } else {
        if (top.has("species")) parse_species(top.at("species"), s, s.kind == ModelKind::cyclic, errors);
        else top.fail("species", "is required");
        if (s.kind == ModelKind::linear_demographic && s.species.size() != 1)
            top.fail("species", "linear-demographic scenarios have exactly one species");
        if (s.kind == ModelKind::cyclic && static_cast<int>(s.species.size()) != cyclic_n)
            top.fail("species", "kind names " + std::to_string(cyclic_n) + " species, the list has " +
                                    std::to_string(s.species.size()));
        if (s.kind == ModelKind::general_network) parse_network(top, s, errors);
        else if (top.has("network")) top.fail("network", "is only used by general-network scenarios");
        if (top.has("mosquito")) top.fail("mosquito", "is only used by mosquito scenarios");
    }

    if (top.has("controller")) {
        if (s.kind != ModelKind::cyclic) top.fail("controller", "is only used by cyclic scenarios");
        else parse_controller(top.at("controller"), s, errors);
    } else if (s.kind == ModelKind::cyclic) {
        top.fail("controller", "is required for cyclic scenarios");
    }

    if (top.has("initial")) parse_initial(top.at("initial"), s, errors);
    else if (!mosquito) top.fail("initial", "is required");

    if (top.has("output")) {
        Fields o(top.at("output"), "output", errors);
        o.reject_unknown({"stride", "snapshot_every"});
        if (const auto v = o.integer("stride")) {
            if (*v < 1) o.fail("stride", "must be at least 1");
            else s.output.stride = static_cast<std::size_t>(*v);
        }
        if (const auto v = o.integer("snapshot_every")) {
            if (*v < 0) o.fail("snapshot_every", "must be nonnegative");
            else s.output.snapshot_every = static_cast<std::size_t>(*v);
        }
    }
    if (top.has("tolerances")) parse_tolerances(top.at("tolerances"), s, errors);

    if (errors.empty()) cross_check(s, errors);
    if (!errors.empty()) throw ValidationError(std::move(errors));
    return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError({"cannot open scenario file " + path.string()});
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_scenario(buf.str());
}

std::string dump_scenario(const Scenario& s) {
    json j;
    j["schema_version"] = s.schema_version;
    if (!s.name.empty()) j["name"] = s.name;
    j["kind"] = kind_name(s.kind, s.species.size());
    j["grid"] = {{"max_age", s.max_age}, {"cells", s.cells}};
    j["horizon"] = s.horizon;
    j["seed"] = s.seed;

    if (!s.species.empty()) {
        json arr = json::array();
        for (const auto& c : s.species) {
            json sp{{"name", c.name},
                    {"mortality", kernel_json(c.mortality)},
                    {"fertility", kernel_json(c.fertility)},
                    {"interaction", kernel_json(c.interaction)}};
            if (c.max_age) sp["max_age"] = *c.max_age;
            if (c.r0) sp["r0"] = *c.r0;
            arr.push_back(std::move(sp));
        }
        j["species"] = std::move(arr);
    }
    if (s.kind == ModelKind::general_network) {
        json links = json::array();
        for (const auto& l : s.links)
            links.push_back({{"prey", l.prey}, {"predator", l.predator}, {"kernel", kernel_json(l.kernel)}});
        j["network"] = {{"adjacency", s.adjacency}, {"links", links}, {"control_placement", s.control_placement}};
        if (s.open_loop_control != 0.0) j["network"]["control"] = s.open_loop_control;
    }
    if (s.controller) {
        const auto& c = *s.controller;
        json cj{{"u_star", c.u_star}, {"theta", c.theta}, {"terminal_gain", c.terminal_gain}, {"eps_z", c.eps_z}};
        if (!c.gains.empty()) cj["gains"] = c.gains;
        if (c.u_max) cj["u_max"] = *c.u_max;
        j["controller"] = std::move(cj);
    }
    if (s.kind != ModelKind::mosquito_bio && s.kind != ModelKind::mosquito_genetic) {
        if (s.initial.kind == InitialRecipe::Kind::equilibrium) {
            j["initial"] = {{"type", "equilibrium"}, {"scales", s.initial.scales}, {"noise", s.initial.noise}};
        } else {
            json profiles = json::array();
            for (const auto& p : s.initial.profiles) profiles.push_back(kernel_json(p));
            j["initial"] = {{"type", "profiles"}, {"profiles", profiles}};
        }
    }
    if (s.mosquito) {
        const auto& m = *s.mosquito;
        json mj{{"mu0", kernel_json(m.mu0)},
                {"mu1", kernel_json(m.mu1)},
                {"mu_F", kernel_json(m.mu_F)},
                {"mu_M", kernel_json(m.mu_M)},
                {"mu_Ms", kernel_json(m.mu_Ms)},
                {"emergence", kernel_json(m.emergence)},
                {"male_weight", kernel_json(m.male_weight)},
                {"beta0", kernel_json(m.beta0)},
                {"tau", m.tau},
                {"r", m.r},
                {"iota", m.iota},
                {"delta", m.delta},
                {"K", time_function_json(m.K)},
                {"Gamma", time_function_json(m.Gamma)},
                {"gamma", time_function_json(m.gamma)},
                {"release_cells", m.release_cells},
                {"strategy", to_string(m.strategy)},
                {"P_star", m.P_star},
                {"initial_scale", m.initial_scale},
                {"uncontrolled_twin", m.uncontrolled_twin}};
        if (m.mu_Fj) mj["mu_Fj"] = kernel_json(*m.mu_Fj);
        if (m.mu_Fa) mj["mu_Fa"] = kernel_json(*m.mu_Fa);
        json rel = json::array();
        for (const auto& r : m.releases) rel.push_back({{"t", r.t}, {"alpha", r.alpha}});
        mj["releases"] = std::move(rel);
        j["mosquito"] = std::move(mj);
    }
    j["output"] = {{"stride", s.output.stride}, {"snapshot_every", s.output.snapshot_every}};
    const Tolerances& t = s.tolerances;
    j["tolerances"] = {{"positivity", t.positivity},   {"lyapunov_slack", t.lyapunov_slack},
                       {"oracle_l1", t.oracle_l1},     {"sign_floor", t.sign_floor},
                       {"tail_norm", t.tail_norm},     {"r0_critical", t.r0_critical},
                       {"convergence_l1", s.convergence_l1}};
    return j.dump(2) + "\n";
}

void save_scenario(const Scenario& s, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write scenario file " + path.string());
    out << dump_scenario(s);
}

std::vector<SpeciesSpec> build_species(const Scenario& s) {
    const AgeGrid g = s.grid();
    std::vector<SpeciesSpec> out;
    for (const auto& c : s.species) {
        auto sp = make_species(make_kernel(g, c.mortality), make_kernel(g, c.fertility), make_kernel(g, c.interaction),
                               c.max_age.value_or(s.max_age));
        if (c.r0) {
            const double base = net_reproduction(sp);
            if (!(base > 0.0)) throw ConfigError("species '" + c.name + "': cannot rescale a vanishing fertility");
            for (double& v : sp.fertility.values) v *= *c.r0 / base;
        }
        out.push_back(std::move(sp));
    }
    return out;
}

GeneralNetworkSpec build_network(const Scenario& s) {
    auto species = build_species(s);
    if (s.kind == ModelKind::cyclic) return make_cyclic_network(std::move(species));

    GeneralNetworkSpec net;
    const std::size_t n = species.size();
    net.species = std::move(species);
    net.adjacency = SquareMatrix(n);
    if (s.kind == ModelKind::general_network) {
        const std::size_t m = s.adjacency.size();
        net.adjacency = SquareMatrix(m);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < std::min(m, s.adjacency[i].size()); ++j)
                net.adjacency(i, j) = static_cast<double>(s.adjacency[i][j]);
        for (const auto& l : s.links) net.kernels.insert_or_assign({l.prey, l.predator}, make_kernel(s.grid(), l.kernel));
        net.control_placement = s.control_placement;
    } else {
        net.control_placement = std::vector<int>(n, 0);
    }
    return net;
}

MosquitoSpec build_mosquito(const Scenario& s) {
    if (!s.mosquito) throw ConfigError("scenario has no mosquito block");
    const auto& m = *s.mosquito;
    const AgeGrid g = s.grid();
    MosquitoSpec spec(g);
    spec.mu0 = make_kernel(g, m.mu0);
    spec.mu1 = make_kernel(g, m.mu1);
    spec.mu_F = make_kernel(g, m.mu_F);
    spec.mu_M = make_kernel(g, m.mu_M);
    spec.mu_Fj = make_kernel(g, m.mu_Fj.value_or(m.mu_F));
    spec.mu_Fa = make_kernel(g, m.mu_Fa.value_or(m.mu_F));
    spec.mu_Ms = make_kernel(g, m.mu_Ms);
    spec.emergence = make_kernel(g, m.emergence);
    spec.male_weight = make_kernel(g, m.male_weight);
    spec.beta0 = make_kernel(g, m.beta0);
    spec.tau = m.tau;
    spec.r = m.r;
    spec.iota = m.iota;
    spec.delta = m.delta;
    spec.K = m.K;
    spec.Gamma = m.Gamma;
    spec.gamma = m.gamma;
    spec.releases = m.releases;
    spec.release_cells = m.release_cells;
    return spec;
}

void set_parameter(Scenario& s, const std::string& path, double value) {
    auto need_controller = [&]() -> ControllerSettings& {
        if (!s.controller) throw ConfigError("parameter '" + path + "' needs a controller block");
        return *s.controller;
    };
    auto need_mosquito = [&]() -> MosquitoConfig& {
        if (!s.mosquito) throw ConfigError("parameter '" + path + "' needs a mosquito block");
        return *s.mosquito;
    };
    if (path == "horizon") s.horizon = value;
    else if (path == "seed") s.seed = static_cast<std::uint64_t>(value);
    else if (path == "grid.cells") s.cells = static_cast<int>(value);
    else if (path == "controller.u_star") need_controller().u_star = value;
    else if (path == "controller.theta") need_controller().theta = value;
    else if (path == "controller.terminal_gain") need_controller().terminal_gain = value;
    else if (path == "mosquito.P_star") need_mosquito().P_star = value;
    else if (path == "mosquito.initial_scale") need_mosquito().initial_scale = value;
    else if (path == "mosquito.alpha")
        for (auto& r : need_mosquito().releases) r.alpha = value;
    else if (path == "initial.scale") s.initial.scales = {value};
    else if (path == "initial.noise") s.initial.noise = value;
    else throw ConfigError("unknown sweep parameter '" + path + "'");
}

}  // namespace agepop
