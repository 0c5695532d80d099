#include "causalvid/checkpoint.hpp"

#include "causalvid/byte_io.hpp"

#include <fstream>
#include <sstream>

namespace causalvid {

const NamedArray* CheckpointData::find(const std::string& name) const {
    for (const auto& a : arrays) {
        if (a.name == name) {
            return &a;
        }
    }
    return nullptr;
}

namespace {

std::string shape_string(const std::vector<int>& shape) {
    std::string out;
    for (size_t i = 0; i < shape.size(); ++i) {
        out += (i ? "x" : "") + std::to_string(shape[i]);
    }
    return out;
}

std::vector<int> parse_shape(const std::string& text) {
    std::vector<int> shape;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, 'x')) {
        shape.push_back(std::stoi(part));
    }
    return shape;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& ckpt) {
    std::ostringstream manifest;
    for (const auto& [k, v] : ckpt.meta) {
        require(k.find_first_of(" \n") == std::string::npos && v.find('\n') == std::string::npos,
                "checkpoint meta entries may not contain whitespace in keys or newlines");
        manifest << "meta " << k << ' ' << v << '\n';
    }
    size_t offset = 0;
    for (const auto& a : ckpt.arrays) {
        size_t count = 1;
        for (int d : a.shape) {
            count *= static_cast<size_t>(d);
        }
        require(count == a.data.size(), "checkpoint array " + a.name + " has a shape/data size mismatch");
        manifest << "array " << a.name << ' ' << shape_string(a.shape) << ' ' << offset << ' ' << count << '\n';
        offset += count;
    }
    const std::string text = manifest.str();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open checkpoint for writing: " + path.string());
    }
    out.write("CVCK", 4);
    write_u32(out, kCheckpointVersion);
    write_u32(out, static_cast<std::uint32_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& a : ckpt.arrays) {
        write_f32_array(out, a.data);
    }
    if (!out) {
        throw IoError("failed while writing checkpoint " + path.string());
    }
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open checkpoint: " + path.string());
    }
    char magic[4];
    if (!in.read(magic, 4) || std::string(magic, 4) != "CVCK") {
        throw IoError("not a checkpoint file (bad magic): " + path.string());
    }
    const std::uint32_t version = read_u32(in);
    if (version != kCheckpointVersion) {
        throw IoError("unsupported checkpoint version " + std::to_string(version));
    }
    const std::uint32_t manifest_bytes = read_u32(in);
    std::string text(manifest_bytes, '\0');
    if (!in.read(text.data(), manifest_bytes)) {
        throw IoError("truncated checkpoint manifest: " + path.string());
    }

    CheckpointData ckpt;
    struct Pending {
        std::string name;
        std::vector<int> shape;
        size_t offset, count;
    };
    std::vector<Pending> pending;
    std::istringstream lines(text);
    std::string line;
    while (std::getline(lines, line)) {
        if (line.empty()) {
            continue;
        }
        std::istringstream ls(line);
        std::string kind;
        ls >> kind;
        if (kind == "meta") {
            std::string key, value;
            ls >> key;
            std::getline(ls, value);
            if (!value.empty() && value.front() == ' ') {
                value.erase(0, 1);
            }
            ckpt.meta[key] = value;
        } else if (kind == "array") {
            Pending p;
            std::string shape;
            ls >> p.name >> shape >> p.offset >> p.count;
            if (!ls) {
                throw IoError("malformed checkpoint manifest line: " + line);
            }
            p.shape = parse_shape(shape);
            pending.push_back(std::move(p));
        } else {
            throw IoError("unknown checkpoint manifest record: " + kind);
        }
    }
    size_t expected = 0;
    for (const auto& p : pending) {
        if (p.offset != expected) {
            throw IoError("checkpoint array " + p.name + " is not contiguous");
        }
        NamedArray a{p.name, p.shape, {}};
        a.data.resize(p.count);
        if (!read_f32_array(in, a.data)) {
            throw IoError("truncated checkpoint payload at array " + p.name);
        }
        expected += p.count;
        ckpt.arrays.push_back(std::move(a));
    }
    return ckpt;
}

std::map<std::string, std::string> model_config_to_map(const ModelConfig& c) {
    return {
        {"num_blocks", std::to_string(c.num_blocks)},
        {"hidden_dim", std::to_string(c.hidden_dim)},
        {"num_heads", std::to_string(c.num_heads)},
        {"patch_size", std::to_string(c.patch_size)},
        {"max_frames", std::to_string(c.max_frames)},
        {"height", std::to_string(c.height)},
        {"width", std::to_string(c.width)},
        {"channels", std::to_string(c.channels)},
        {"caption_vocab_size", std::to_string(c.caption_vocab_size)},
        {"caption_len", std::to_string(c.caption_len)},
        {"mlp_ratio", std::to_string(c.mlp_ratio)},
        {"prompt_enhance_len", std::to_string(c.prompt_enhance_len)},
        {"causal", c.causal ? "1" : "0"},
        {"literal_subprompt", c.literal_subprompt ? "1" : "0"},
    };
}

ModelConfig model_config_from_map(const std::map<std::string, std::string>& kv, const ModelConfig& base) {
    ModelConfig c = base;
    const auto get_int = [&](const char* key, int& field) {
        const auto it = kv.find(key);
        if (it != kv.end()) {
            try {
                field = std::stoi(it->second);
            } catch (const std::exception&) {
                throw ConfigError(std::string("model field ") + key + " is not an integer: " + it->second);
            }
        }
    };
    const auto get_bool = [&](const char* key, bool& field) {
        const auto it = kv.find(key);
        if (it != kv.end()) {
            field = it->second == "1" || it->second == "true";
        }
    };
    get_int("num_blocks", c.num_blocks);
    get_int("hidden_dim", c.hidden_dim);
    get_int("num_heads", c.num_heads);
    get_int("patch_size", c.patch_size);
    get_int("max_frames", c.max_frames);
    get_int("height", c.height);
    get_int("width", c.width);
    get_int("channels", c.channels);
    get_int("caption_vocab_size", c.caption_vocab_size);
    get_int("caption_len", c.caption_len);
    get_int("mlp_ratio", c.mlp_ratio);
    get_int("prompt_enhance_len", c.prompt_enhance_len);
    get_bool("causal", c.causal);
    get_bool("literal_subprompt", c.literal_subprompt);
    return c;
}

CheckpointData model_checkpoint(const CausalVideoTransformer& model) {
    CheckpointData ckpt;
    for (const auto& [k, v] : model_config_to_map(model.config())) {
        ckpt.meta["model." + k] = v;
    }
    const auto& params = model.parameters();
    for (const auto& e : params.entries()) {
        NamedArray a{e.name, e.shape, {}};
        a.data.resize(e.size);
        for (size_t i = 0; i < e.size; ++i) {
            a.data[i] = static_cast<float>(params.values()[e.offset + i]);
        }
        ckpt.arrays.push_back(std::move(a));
    }
    return ckpt;
}

CausalVideoTransformer model_from_checkpoint(const CheckpointData& ckpt) {
    std::map<std::string, std::string> kv;
    for (const auto& [k, v] : ckpt.meta) {
        if (k.rfind("model.", 0) == 0) {
            kv[k.substr(6)] = v;
        }
    }
    CausalVideoTransformer model(model_config_from_map(kv));
    auto& params = model.parameters();
    for (const auto& e : params.entries()) {
        const NamedArray* a = ckpt.find(e.name);
        if (!a) {
            throw IoError("checkpoint is missing parameter " + e.name);
        }
        if (a->shape != e.shape) {
            throw IoError("checkpoint parameter " + e.name + " has shape " + shape_string(a->shape) + ", expected " +
                          shape_string(e.shape));
        }
        for (size_t i = 0; i < e.size; ++i) {
            params.values()[e.offset + i] = a->data[i];
        }
    }
    return model;
}

}  // namespace causalvid
