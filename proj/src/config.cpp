#include "cddpc/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

namespace cddpc {

namespace {

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, sep)) {
        std::string t = trim(item);
        if (!t.empty()) out.push_back(std::move(t));
    }
    return out;
}

Error config_error(const std::string& what) { return Error(ErrorKind::Config, what); }

}  // namespace

double parse_number(const std::string& text, const std::string& what) {
    const std::string t = lower(trim(text));
    if (t == "inf" || t == "+inf") return kInfinity;
    if (t == "-inf") return -kInfinity;
    double v = 0.0;
    const char* first = t.data();
    const char* last = t.data() + t.size();
    if (!t.empty() && *first == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last || t.empty()) {
        throw config_error(what + ": '" + text + "' is not a number");
    }
    return v;
}

KeyValueFile KeyValueFile::parse(std::istream& in, const std::string& source) {
    KeyValueFile kv;
    kv.source_ = source;
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (lineno == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string t = trim(line);
        if (t.empty()) continue;
        const std::string where = source + ":" + std::to_string(lineno);
        if (t.front() == '[') {
            if (t.back() != ']') throw config_error(where + ": unterminated section header");
            section = lower(trim(t.substr(1, t.size() - 2)));
            if (section.empty()) throw config_error(where + ": empty section name");
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw config_error(where + ": expected 'key = value'");
        const std::string key = lower(trim(t.substr(0, eq)));
        if (key.empty()) throw config_error(where + ": empty key");
        const std::string full = section.empty() ? key : section + "." + key;
        if (kv.values_.count(full)) throw config_error(where + ": duplicate key '" + full + "'");
        kv.values_[full] = trim(t.substr(eq + 1));
        kv.used_[full] = false;
    }
    return kv;
}

KeyValueFile KeyValueFile::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Io, "cannot open config file '" + path.string() + "'");
    return parse(in, path.string());
}

bool KeyValueFile::has(const std::string& key) const { return values_.count(key) != 0; }

std::string KeyValueFile::get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw config_error(source_ + ": missing key '" + key + "'");
    used_[key] = true;
    return it->second;
}

std::string KeyValueFile::get(const std::string& key, const std::string& fallback) const {
    return has(key) ? get(key) : fallback;
}

double KeyValueFile::number(const std::string& key) const { return parse_number(get(key), source_ + ": " + key); }

double KeyValueFile::number(const std::string& key, double fallback) const {
    return has(key) ? number(key) : fallback;
}

long KeyValueFile::integer(const std::string& key, long fallback) const {
    if (!has(key)) return fallback;
    const double v = number(key);
    if (!std::isfinite(v) || v != std::floor(v)) throw config_error(source_ + ": " + key + " must be an integer");
    return static_cast<long>(v);
}

bool KeyValueFile::boolean(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string v = lower(get(key));
    if (v == "true" || v == "yes" || v == "1" || v == "on") return true;
    if (v == "false" || v == "no" || v == "0" || v == "off") return false;
    throw config_error(source_ + ": " + key + " must be true or false");
}

std::vector<double> KeyValueFile::numbers(const std::string& key) const {
    std::vector<double> out;
    for (const std::string& s : split(get(key), ',')) out.push_back(parse_number(s, source_ + ": " + key));
    return out;
}

std::vector<std::string> KeyValueFile::strings(const std::string& key) const { return split(get(key), ','); }

Eigen::MatrixXd KeyValueFile::matrix(const std::string& key) const {
    std::vector<std::vector<double>> rows;
    for (const std::string& row : split(get(key), ';')) {
        std::vector<double> r;
        std::istringstream in(row);
        std::string tok;
        while (in >> tok) r.push_back(parse_number(tok, source_ + ": " + key));
        if (!rows.empty() && r.size() != rows.front().size()) {
            throw config_error(source_ + ": " + key + " has rows of different length");
        }
        rows.push_back(std::move(r));
    }
    if (rows.empty() || rows.front().empty()) throw config_error(source_ + ": " + key + " is empty");
    Eigen::MatrixXd m(rows.size(), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
    }
    return m;
}

void KeyValueFile::set(const std::string& key, const std::string& value) {
    values_[key] = value;
    used_.try_emplace(key, false);
}

std::vector<std::string> KeyValueFile::unused_keys() const {
    std::vector<std::string> out;
    for (const auto& [k, used] : used_) {
        if (!used) out.push_back(k);
    }
    return out;
}

std::vector<double> TuneSpec::grid() const {
    require(points >= 1, ErrorKind::Config, "tune.points must be >= 1");
    require(grid_lo > 0 && grid_hi >= grid_lo, ErrorKind::Config, "tuning grid needs 0 < lo <= hi");
    if (points == 1) return {grid_hi};
    std::vector<double> g(points);
    const double a = std::log10(grid_lo), b = std::log10(grid_hi);
    for (int i = 0; i < points; ++i) g[i] = std::pow(10.0, a + (b - a) * i / (points - 1));
    return g;
}

void ExperimentConfig::validate() const {
    plant.validate();
    require(!n_d.empty() && !sigma_e.empty() && !epsilon.empty(), ErrorKind::Config, "sweep grids must be nonempty");
    require(seeds >= 1, ErrorKind::Config, "seeds must be >= 1");
    require(steps >= 1, ErrorKind::Config, "steps must be >= 1");
    require(!controllers.empty(), ErrorKind::Config, "no controllers listed");
    for (int n : n_d) require(n >= horizon.depth(), ErrorKind::Config, "N_d must be >= L_p + L_f");
    for (double s : sigma_e) require(s >= 0, ErrorKind::Config, "sigma_e must be >= 0");
    for (double e : epsilon) require(e >= 0 && e <= 1, ErrorKind::Config, "eps must lie in [0, 1]");
    require(reference.channels() == plant.p(), ErrorKind::Config, "reference needs one channel per output");
    if (excitation.kind == ExcitationSpec::Kind::ClosedLoop) {
        excitation.feedback.validate(plant.m(), plant.p());
    }
    for (const ControllerEntry& c : controllers) {
        require(c.mu >= 0 && c.lambda >= 0, ErrorKind::Config, "regularization weights must be >= 0");
        controller_spec(c).validate();
    }
    if (!baseline.empty()) controller(baseline);
    tune.grid();
    require(tune.validation_seeds >= 1, ErrorKind::Config, "tune.validation_seeds must be >= 1");
}

ControllerSpec ExperimentConfig::controller_spec(const ControllerEntry& entry) const {
    ControllerSpec s;
    s.kind = entry.kind;
    s.mu = entry.mu;
    s.lambda = entry.lambda;
    s.horizon = horizon;
    s.cost = cost;
    s.box = box;
    s.qp = qp;
    s.relax_output_bounds = relax_output_bounds;
    return s;
}

const ControllerEntry& ExperimentConfig::controller(const std::string& id) const {
    for (const ControllerEntry& c : controllers) {
        if (c.id() == id) return c;
    }
    throw Error(ErrorKind::Config, "controller '" + id + "' is not listed in the config");
}

namespace {

StateSpaceModel parse_plant(const KeyValueFile& kv) {
    const std::string preset = lower(kv.get("plant.model", "siso"));
    StateSpaceModel s;
    if (preset == "siso") {
        s = StateSpaceModel::benchmark_siso();
    } else if (preset == "mimo") {
        s = StateSpaceModel::benchmark_mimo();
    } else if (preset != "custom") {
        throw config_error(kv.source() + ": plant.model must be siso, mimo or custom");
    }
    for (const char* name : {"a", "b", "c", "d", "k"}) {
        const std::string key = std::string("plant.") + name;
        if (!kv.has(key)) {
            require(preset != "custom", ErrorKind::Config, kv.source() + ": custom plant needs " + key);
            continue;
        }
        Eigen::MatrixXd m = kv.matrix(key);
        switch (name[0]) {
            case 'a': s.A = std::move(m); break;
            case 'b': s.B = std::move(m); break;
            case 'c': s.C = std::move(m); break;
            case 'd': s.D = std::move(m); break;
            default: s.K = std::move(m); break;
        }
    }
    return s;
}

LinearFeedbackController parse_feedback(const KeyValueFile& kv) {
    LinearFeedbackController fb;
    const std::string preset = lower(kv.get("feedback.preset", "pi"));
    if (preset == "pi") {
        fb = LinearFeedbackController::benchmark_pi();
    } else if (preset != "custom") {
        throw config_error(kv.source() + ": feedback.preset must be pi or custom");
    }
    if (kv.has("feedback.ac")) fb.Ac = kv.matrix("feedback.ac");
    if (kv.has("feedback.bc")) fb.Bc = kv.matrix("feedback.bc");
    if (kv.has("feedback.cc")) fb.Cc = kv.matrix("feedback.cc");
    if (kv.has("feedback.dc")) fb.Dc = kv.matrix("feedback.dc");
    return fb;
}

Eigen::VectorXd bound_vector(const KeyValueFile& kv, const std::string& key, Eigen::Index size, double fallback) {
    if (!kv.has(key)) return Eigen::VectorXd::Constant(size, fallback);
    const std::vector<double> v = kv.numbers(key);
    if (v.size() == 1) return Eigen::VectorXd::Constant(size, v[0]);
    require(static_cast<Eigen::Index>(v.size()) == size, ErrorKind::Config,
            kv.source() + ": " + key + " needs 1 or " + std::to_string(size) + " entries");
    return Eigen::Map<const Eigen::VectorXd>(v.data(), size);
}

Reference parse_reference(const KeyValueFile& kv, Eigen::Index p) {
    const std::string shape = lower(kv.get("reference.shape", "sine"));
    Reference::Channel c;
    if (shape == "sine") {
        c.shape = Reference::Shape::Sine;
    } else if (shape == "square") {
        c.shape = Reference::Shape::Square;
    } else if (shape == "constant") {
        c.shape = Reference::Shape::Constant;
    } else {
        throw config_error(kv.source() + ": reference.shape must be sine, square or constant");
    }
    c.period = kv.number("reference.period", 60.0);
    require(c.period > 0, ErrorKind::Config, "reference.period must be > 0");
    const Eigen::VectorXd amp = bound_vector(kv, "reference.amplitude", p, 1.0);
    const Eigen::VectorXd off = bound_vector(kv, "reference.offset", p, 0.0);
    std::vector<Reference::Channel> channels(p, c);
    for (Eigen::Index i = 0; i < p; ++i) {
        channels[i].amplitude = amp(i);
        channels[i].offset = off(i);
    }
    return Reference(std::move(channels));
}

Eigen::MatrixXd weight(const KeyValueFile& kv, const std::string& key, Eigen::Index size, double fallback) {
    if (kv.has(key + "_matrix")) return kv.matrix(key + "_matrix");
    return bound_vector(kv, key, size, fallback).asDiagonal();
}

}  // namespace

ExperimentConfig parse_config(const KeyValueFile& kv) {
    ExperimentConfig c;
    c.name = kv.get("experiment.name", c.name);
    c.plant = parse_plant(kv);
    c.plant.validate();
    const Eigen::Index m = c.plant.m(), p = c.plant.p();

    const std::string ex = lower(kv.get("excitation.kind", "square"));
    if (ex == "square") {
        c.excitation.kind = ExcitationSpec::Kind::Square;
    } else if (ex == "uniform") {
        c.excitation.kind = ExcitationSpec::Kind::Uniform;
    } else if (ex == "closed_loop") {
        c.excitation.kind = ExcitationSpec::Kind::ClosedLoop;
        c.excitation.feedback = parse_feedback(kv);
    } else {
        throw config_error(kv.source() + ": excitation.kind must be square, uniform or closed_loop");
    }
    c.excitation.period = static_cast<int>(kv.integer("excitation.period", 200));
    c.excitation.hold = static_cast<int>(kv.integer("excitation.hold", 1));
    c.excitation.amplitude = kv.number("excitation.amplitude", 3.0);
    require(c.excitation.hold >= 1, ErrorKind::Config, "excitation.hold must be >= 1");
    c.excitation.dither = kv.number("excitation.dither", 0.0);
    require(c.excitation.dither >= 0, ErrorKind::Config, "excitation.dither must be >= 0");

    c.horizon = HorizonSpec(static_cast<int>(kv.integer("horizon.past", 15)),
                            static_cast<int>(kv.integer("horizon.future", 30)));
    c.cost.output_weight = weight(kv, "cost.q", p, 1.0);
    c.cost.input_weight = weight(kv, "cost.r", m, 0.05);
    c.box.u_lo = bound_vector(kv, "box.u_lo", m, -kInfinity);
    c.box.u_hi = bound_vector(kv, "box.u_hi", m, kInfinity);
    c.box.y_lo = bound_vector(kv, "box.y_lo", p, -kInfinity);
    c.box.y_hi = bound_vector(kv, "box.y_hi", p, kInfinity);
    c.reference = parse_reference(kv, p);
    c.steps = static_cast<int>(kv.integer("control.steps", 60));
    c.relax_output_bounds = kv.boolean("control.relax_output_bounds", false);

    c.qp.eps_abs = kv.number("qp.eps_abs", c.qp.eps_abs);
    c.qp.eps_rel = kv.number("qp.eps_rel", c.qp.eps_rel);
    c.qp.max_iter = static_cast<int>(kv.integer("qp.max_iter", c.qp.max_iter));
    c.qp.polish = kv.boolean("qp.polish", c.qp.polish);

    c.n_d.clear();
    for (double v : kv.numbers("sweep.n_d")) {
        require(v == std::floor(v) && v >= 1, ErrorKind::Config, kv.source() + ": sweep.n_d must hold integers");
        c.n_d.push_back(static_cast<int>(v));
    }
    c.sigma_e = kv.has("sweep.sigma_e") ? kv.numbers("sweep.sigma_e") : std::vector<double>{0.0};
    c.epsilon = kv.has("sweep.eps") ? kv.numbers("sweep.eps") : std::vector<double>{0.0};
    c.seeds = static_cast<int>(kv.integer("sweep.seeds", 100));
    const long offset = kv.integer("sweep.seed_offset", 0);
    require(offset >= 0, ErrorKind::Config, "sweep.seed_offset must be >= 0");
    c.seed_offset = static_cast<std::uint64_t>(offset);
    c.threads = static_cast<int>(kv.integer("sweep.threads", 0));
    require(c.threads >= 0, ErrorKind::Config, "sweep.threads must be >= 0");

    for (const std::string& id : kv.strings("controllers.run")) {
        ControllerEntry e;
        e.kind = controller_kind_from_id(id);
        for (const ControllerEntry& other : c.controllers) {
            require(other.kind != e.kind, ErrorKind::Config, kv.source() + ": controller '" + id + "' listed twice");
        }
        e.mu = kv.number("controllers." + id + ".mu", e.mu);
        e.lambda = kv.number("controllers." + id + ".lambda", e.lambda);
        e.tune = kv.boolean("controllers." + id + ".tune", false);
        c.controllers.push_back(e);
    }

    c.tune.grid_lo = kv.number("tune.grid_lo", c.tune.grid_lo);
    c.tune.grid_hi = kv.number("tune.grid_hi", c.tune.grid_hi);
    c.tune.points = static_cast<int>(kv.integer("tune.points", c.tune.points));
    c.tune.validation_seeds = static_cast<int>(kv.integer("tune.validation_seeds", c.tune.validation_seeds));
    const long voff = kv.integer("tune.validation_seed_offset", static_cast<long>(c.tune.validation_seed_offset));
    require(voff >= 0, ErrorKind::Config, "tune.validation_seed_offset must be >= 0");
    c.tune.validation_seed_offset = static_cast<std::uint64_t>(voff);

    c.baseline = kv.get("output.baseline", "");
    c.output_dir = kv.get("output.dir", c.output_dir.string());
    c.record_wall_time = kv.boolean("output.wall_time", false);

    const std::vector<std::string> unused = kv.unused_keys();
    if (!unused.empty()) {
        std::string list;
        for (const std::string& k : unused) list += (list.empty() ? "" : ", ") + k;
        throw config_error(kv.source() + ": unknown keys: " + list);
    }
    c.validate();
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    return parse_config(KeyValueFile::load(path));
}

}  // namespace cddpc
