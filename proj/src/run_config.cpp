#include "raunet/run_config.hpp"

#include <fstream>
#include <sstream>

namespace raunet {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ShapeError("config: bad boolean for " + key + ": '" + v + "'");
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ShapeError("config: bad number for " + key + ": '" + v + "'");
    }
}

std::size_t parse_size(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const long long n = std::stoll(v, &used);
        if (used != v.size() || n < 0) throw std::invalid_argument(v);
        return static_cast<std::size_t>(n);
    } catch (const std::exception&) {
        throw ShapeError("config: bad integer for " + key + ": '" + v + "'");
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const unsigned long long n = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return n;
    } catch (const std::exception&) {
        throw ShapeError("config: bad integer for " + key + ": '" + v + "'");
    }
}

std::array<std::size_t, 4> parse_blocks(const std::string& key, const std::string& v) {
    std::array<std::size_t, 4> out{};
    std::istringstream is(v);
    std::string tok;
    std::size_t i = 0;
    while (std::getline(is, tok, ',')) {
        if (i >= 4) throw ShapeError("config: " + key + " needs exactly 4 values");
        out[i++] = parse_size(key, trim(tok));
    }
    if (i != 4) throw ShapeError("config: " + key + " needs exactly 4 values");
    return out;
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
    // model
    if (key == "model.num_classes") model.num_classes = parse_size(key, value);
    else if (key == "model.width_mult") model.width_mult = parse_double(key, value);
    else if (key == "model.blocks") model.block_counts = parse_blocks(key, value);
    else if (key == "model.use_aam") model.use_aam = parse_bool(key, value);
    else if (key == "model.input_h") model.input_h = parse_size(key, value);
    else if (key == "model.input_w") model.input_w = parse_size(key, value);
    // loss
    else if (key == "loss.alpha") loss.alpha = parse_double(key, value);
    else if (key == "loss.smooth_eps") loss.smooth_eps = parse_double(key, value);
    else if (key == "loss.binary_dice") loss.binary_dice = parse_bool(key, value);
    // train
    else if (key == "train.batch_size") train.batch_size = parse_size(key, value);
    else if (key == "train.lr0") train.lr0 = parse_double(key, value);
    else if (key == "train.lr_decay") train.lr_decay = parse_double(key, value);
    else if (key == "train.lr_decay_every") train.lr_decay_every = parse_size(key, value);
    else if (key == "train.lr_decay_unit") train.lr_decay_unit = schedule_unit_from_string(value);
    else if (key == "train.epochs") train.epochs = parse_size(key, value);
    else if (key == "train.seed") train.seed = parse_u64(key, value);
    else if (key == "train.eval_every") train.eval_every = parse_size(key, value);
    else if (key == "train.loss") train.loss = loss_kind_from_string(value);
    else if (key == "train.checkpoint_dir") train.checkpoint_dir = value;
    // gen
    else if (key == "gen.height") gen.height = parse_size(key, value);
    else if (key == "gen.width") gen.width = parse_size(key, value);
    else if (key == "gen.num_classes") gen.num_classes = parse_size(key, value);
    else if (key == "gen.images_per_split") gen.images_per_split = parse_size(key, value);
    else if (key == "gen.augment_images") gen.augment_images = parse_size(key, value);
    else if (key == "gen.max_instruments") gen.max_instruments = parse_size(key, value);
    else if (key == "gen.foreground_ratio") gen.foreground_ratio = parse_double(key, value);
    else if (key == "gen.specular_count_min") gen.specular.count_min = parse_size(key, value);
    else if (key == "gen.specular_count_max") gen.specular.count_max = parse_size(key, value);
    else if (key == "gen.specular_intensity") gen.specular.intensity = parse_double(key, value);
    else if (key == "gen.specular_size_min") gen.specular.size_min = parse_double(key, value);
    else if (key == "gen.specular_size_max") gen.specular.size_max = parse_double(key, value);
    else if (key == "gen.burst_len") gen.burst_len = parse_size(key, value);
    else if (key == "gen.seed") gen.seed = parse_u64(key, value);
    else throw ShapeError("config: unknown key '" + key + "'");
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path.string());
    RunConfig cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ShapeError("config " + path.string() + ":" + std::to_string(lineno) +
                             ": expected key=value");
        }
        cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

std::string RunConfig::serialize() const {
    std::ostringstream os;
    os << "model.num_classes = " << model.num_classes << '\n';
    os << "model.width_mult = " << fmt(model.width_mult) << '\n';
    os << "model.blocks = " << model.block_counts[0] << ',' << model.block_counts[1] << ','
       << model.block_counts[2] << ',' << model.block_counts[3] << '\n';
    os << "model.use_aam = " << (model.use_aam ? "true" : "false") << '\n';
    os << "model.input_h = " << model.input_h << '\n';
    os << "model.input_w = " << model.input_w << '\n';
    os << "loss.alpha = " << fmt(loss.alpha) << '\n';
    os << "loss.smooth_eps = " << fmt(loss.smooth_eps) << '\n';
    os << "loss.binary_dice = " << (loss.binary_dice ? "true" : "false") << '\n';
    os << "train.batch_size = " << train.batch_size << '\n';
    os << "train.lr0 = " << fmt(train.lr0) << '\n';
    os << "train.lr_decay = " << fmt(train.lr_decay) << '\n';
    os << "train.lr_decay_every = " << train.lr_decay_every << '\n';
    os << "train.lr_decay_unit = " << to_string(train.lr_decay_unit) << '\n';
    os << "train.epochs = " << train.epochs << '\n';
    os << "train.seed = " << train.seed << '\n';
    os << "train.eval_every = " << train.eval_every << '\n';
    os << "train.loss = " << to_string(train.loss) << '\n';
    os << "train.checkpoint_dir = " << train.checkpoint_dir.string() << '\n';
    os << "gen.height = " << gen.height << '\n';
    os << "gen.width = " << gen.width << '\n';
    os << "gen.num_classes = " << gen.num_classes << '\n';
    os << "gen.images_per_split = " << gen.images_per_split << '\n';
    os << "gen.augment_images = " << gen.augment_images << '\n';
    os << "gen.max_instruments = " << gen.max_instruments << '\n';
    os << "gen.foreground_ratio = " << fmt(gen.foreground_ratio) << '\n';
    os << "gen.specular_count_min = " << gen.specular.count_min << '\n';
    os << "gen.specular_count_max = " << gen.specular.count_max << '\n';
    os << "gen.specular_intensity = " << fmt(gen.specular.intensity) << '\n';
    os << "gen.specular_size_min = " << fmt(gen.specular.size_min) << '\n';
    os << "gen.specular_size_max = " << fmt(gen.specular.size_max) << '\n';
    os << "gen.burst_len = " << gen.burst_len << '\n';
    os << "gen.seed = " << gen.seed << '\n';
    return os.str();
}

void RunConfig::write(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write config " + path.string());
    out << serialize();
    if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace raunet
