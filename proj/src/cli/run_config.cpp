#include "run_config.hpp"

#include <fstream>
#include <functional>
#include <sstream>

namespace causalvid::cli {

namespace {

struct Field {
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

int to_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const int out = std::stoi(v, &pos);
        if (pos == v.size()) {
            return out;
        }
    } catch (const std::exception&) {
    }
    throw ConfigError("config key " + key + " expects an integer, got '" + v + "'");
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const auto out = std::stoull(v, &pos);
        if (pos == v.size()) {
            return out;
        }
    } catch (const std::exception&) {
    }
    throw ConfigError("config key " + key + " expects a non-negative integer, got '" + v + "'");
}

double to_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const double out = std::stod(v, &pos);
        if (pos == v.size()) {
            return out;
        }
    } catch (const std::exception&) {
    }
    throw ConfigError("config key " + key + " expects a number, got '" + v + "'");
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "yes" || v == "on") {
        return true;
    }
    if (v == "0" || v == "false" || v == "no" || v == "off") {
        return false;
    }
    throw ConfigError("config key " + key + " expects a boolean, got '" + v + "'");
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

template <typename M>
Field int_field(const std::string& key, M member) {
    return {[key, member](RunConfig& c, const std::string& v) { std::invoke(member, c) = to_int(key, v); },
            [member](const RunConfig& c) { return std::to_string(std::invoke(member, c)); }};
}

template <typename M>
Field double_field(const std::string& key, M member) {
    return {[key, member](RunConfig& c, const std::string& v) { std::invoke(member, c) = to_double(key, v); },
            [member](const RunConfig& c) { return fmt(std::invoke(member, c)); }};
}

template <typename M>
Field bool_field(const std::string& key, M member) {
    return {[key, member](RunConfig& c, const std::string& v) { std::invoke(member, c) = to_bool(key, v); },
            [member](const RunConfig& c) { return std::string(std::invoke(member, c) ? "true" : "false"); }};
}

template <typename M>
Field string_field(M member) {
    return {[member](RunConfig& c, const std::string& v) { std::invoke(member, c) = v; },
            [member](const RunConfig& c) { return std::invoke(member, c); }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
    static const std::vector<std::pair<std::string, Field>> table = {
        {"num_blocks", int_field("num_blocks", [](auto& c) -> auto& { return c.model.num_blocks; })},
        {"hidden_dim", int_field("hidden_dim", [](auto& c) -> auto& { return c.model.hidden_dim; })},
        {"num_heads", int_field("num_heads", [](auto& c) -> auto& { return c.model.num_heads; })},
        {"patch_size", int_field("patch_size", [](auto& c) -> auto& { return c.model.patch_size; })},
        {"max_frames", int_field("max_frames", [](auto& c) -> auto& { return c.model.max_frames; })},
        {"height", int_field("height", [](auto& c) -> auto& { return c.model.height; })},
        {"width", int_field("width", [](auto& c) -> auto& { return c.model.width; })},
        {"channels", int_field("channels", [](auto& c) -> auto& { return c.model.channels; })},
        {"caption_vocab_size",
         int_field("caption_vocab_size", [](auto& c) -> auto& { return c.model.caption_vocab_size; })},
        {"caption_len", int_field("caption_len", [](auto& c) -> auto& { return c.model.caption_len; })},
        {"mlp_ratio", int_field("mlp_ratio", [](auto& c) -> auto& { return c.model.mlp_ratio; })},
        {"prompt_enhance_len",
         int_field("prompt_enhance_len", [](auto& c) -> auto& { return c.model.prompt_enhance_len; })},
        {"causal", bool_field("causal", [](auto& c) -> auto& { return c.model.causal; })},
        {"literal_subprompt", bool_field("literal_subprompt", [](auto& c) -> auto& { return c.model.literal_subprompt; })},

        {"seq_len", int_field("seq_len", [](auto& c) -> auto& { return c.train.seq_len; })},
        {"batch_size", int_field("batch_size", [](auto& c) -> auto& { return c.train.batch_size; })},
        {"total_steps", int_field("total_steps", [](auto& c) -> auto& { return c.train.total_steps; })},
        {"learning_rate", double_field("learning_rate", [](auto& c) -> auto& { return c.train.learning_rate; })},
        {"weight_decay", double_field("weight_decay", [](auto& c) -> auto& { return c.train.weight_decay; })},
        {"caption_dropout_p",
         double_field("caption_dropout_p", [](auto& c) -> auto& { return c.train.caption_dropout_p; })},
        {"loss_vlb_weight", double_field("loss_vlb_weight", [](auto& c) -> auto& { return c.train.loss_vlb_weight; })},
        {"frame_interval", int_field("frame_interval", [](auto& c) -> auto& { return c.train.frame_interval; })},
        {"log_interval", int_field("log_interval", [](auto& c) -> auto& { return c.train.log_interval; })},
        {"checkpoint_interval",
         int_field("checkpoint_interval", [](auto& c) -> auto& { return c.train.checkpoint_interval; })},

        {"diffusion_steps", int_field("diffusion_steps", [](auto& c) -> auto& { return c.diffusion_steps; })},
        {"beta1", double_field("beta1", [](auto& c) -> auto& { return c.beta1; })},
        {"betaT", double_field("betaT", [](auto& c) -> auto& { return c.betaT; })},
        {"ddim_steps", int_field("ddim_steps", [](auto& c) -> auto& { return c.ddim_steps; })},

        {"chunk_len", int_field("chunk_len", [](auto& c) -> auto& { return c.chunk_len; })},
        {"cfg_scale", double_field("cfg_scale", [](auto& c) -> auto& { return c.cfg_scale; })},
        {"num_chunks", int_field("num_chunks", [](auto& c) -> auto& { return c.num_chunks; })},
        {"use_cache", bool_field("use_cache", [](auto& c) -> auto& { return c.use_cache; })},

        {"data_count", int_field("data_count", [](auto& c) -> auto& { return c.data_count; })},
        {"data_frames", int_field("data_frames", [](auto& c) -> auto& { return c.data_frames; })},

        {"eval_offset", int_field("eval_offset", [](auto& c) -> auto& { return c.eval_offset; })},
        {"eval_per_chunk", bool_field("eval_per_chunk", [](auto& c) -> auto& { return c.eval_per_chunk; })},

        {"bench_prefix", int_field("bench_prefix", [](auto& c) -> auto& { return c.bench_prefix; })},
        {"bench_chunks", int_field("bench_chunks", [](auto& c) -> auto& { return c.bench_chunks; })},
        {"bench_ddim_steps", int_field("bench_ddim_steps", [](auto& c) -> auto& { return c.bench_ddim_steps; })},

        {"data_dir", string_field([](auto& c) -> auto& { return c.data_dir; })},
        {"checkpoint", string_field([](auto& c) -> auto& { return c.checkpoint; })},
        {"out", string_field([](auto& c) -> auto& { return c.out; })},
        {"seed", {[](RunConfig& c, const std::string& v) { c.seed = to_u64("seed", v); },
                  [](const RunConfig& c) { return std::to_string(c.seed); }}},
    };
    return table;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return "";
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<std::string> RunConfig::keys() {
    std::vector<std::string> out;
    for (const auto& [k, f] : fields()) {
        out.push_back(k);
    }
    return out;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    for (const auto& [k, f] : fields()) {
        if (k == key) {
            f.set(*this, value);
            return;
        }
    }
    throw ConfigError("unknown config key '" + key + "'");
}

std::map<std::string, std::string> RunConfig::to_map() const {
    std::map<std::string, std::string> out;
    for (const auto& [k, f] : fields()) {
        out[k] = f.get(*this);
    }
    return out;
}

void RunConfig::validate() const {
    model.validate();
    train.validate();
    require_config(diffusion_steps >= 1, "diffusion_steps must be positive");
    require_config(ddim_steps >= 1 && ddim_steps <= diffusion_steps, "ddim_steps must lie in [1, diffusion_steps]");
    require_config(bench_ddim_steps >= 1 && bench_ddim_steps <= diffusion_steps,
                   "bench_ddim_steps must lie in [1, diffusion_steps]");
    require_config(chunk_len >= 1 && chunk_len <= model.max_frames, "chunk_len must lie in [1, max_frames]");
    require_config(num_chunks >= 1, "num_chunks must be positive");
    require_config(cfg_scale >= 0.0, "cfg_scale must be non-negative");
    require_config(data_count >= 1, "data_count must be positive");
    require_config(data_frames >= 1, "data_frames must be positive");
    require_config(eval_offset >= 0, "eval_offset must be non-negative");
    require_config(bench_prefix >= 0, "bench_prefix must be non-negative");
    require_config(bench_chunks >= 1, "bench_chunks must be positive");
}

std::map<std::string, std::string> parse_key_values(const std::string& text, const std::string& origin) {
    std::map<std::string, std::string> out;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) {
            line.erase(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
        }
        out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return out;
}

std::map<std::string, std::string> read_key_value_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open config file " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_key_values(ss.str(), path.string());
}

void write_resolved_config(const std::filesystem::path& dir, const RunConfig& cfg) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
    }
    std::ofstream out(dir / "resolved_config.txt", std::ios::trunc);
    if (!out) {
        throw IoError("cannot write resolved config into " + dir.string());
    }
    for (const auto& [k, v] : cfg.to_map()) {
        out << k << " = " << v << '\n';
    }
}

}  // namespace causalvid::cli
