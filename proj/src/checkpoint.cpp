#include "hctx/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace hctx {

namespace {

using nlohmann::json;

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

void write_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<std::uint8_t>(os, t.dtype() == DType::F32 ? 1 : 2);
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) write_pod<std::uint64_t>(os, e);
    if (t.dtype() == DType::F32) {
        for (std::size_t i = 0; i < t.numel(); ++i) {
            write_pod<float>(os, static_cast<float>(t.data()[i]));
        }
    } else {
        os.write(reinterpret_cast<const char*>(t.data()),
                 static_cast<std::streamsize>(t.numel() * sizeof(double)));
    }
}

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

NamedTensor read_tensor(std::istream& is) {
    NamedTensor out;
    const std::uint32_t name_len = read_pod<std::uint32_t>(is);
    out.name.resize(name_len);
    is.read(out.name.data(), name_len);
    const std::uint8_t tag = read_pod<std::uint8_t>(is);
    if (tag != 1 && tag != 2) throw std::runtime_error("checkpoint: bad dtype tag");
    const DType dt = tag == 1 ? DType::F32 : DType::F64;
    const std::uint32_t rank = read_pod<std::uint32_t>(is);
    std::vector<std::size_t> shape;
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        shape.push_back(static_cast<std::size_t>(read_pod<std::uint64_t>(is)));
        n *= shape.back();
    }
    std::vector<double> values(n);
    if (dt == DType::F32) {
        for (std::size_t i = 0; i < n; ++i) {
            values[i] = static_cast<double>(read_pod<float>(is));
        }
    } else {
        is.read(reinterpret_cast<char*>(values.data()),
                static_cast<std::streamsize>(n * sizeof(double)));
        if (!is) throw std::runtime_error("checkpoint: truncated tensor data");
    }
    out.tensor = Tensor::from_values(std::move(shape), std::move(values), dt);
    return out;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& cfg) {
    json j;
    j["vocab_size"] = cfg.vocab_size;
    j["d_model"] = cfg.d_model;
    j["n_heads"] = cfg.n_heads;
    j["n_layers"] = cfg.n_layers;
    j["chunk_size"] = cfg.chunk_size;
    j["memory_slots"] = cfg.memory_slots;
    j["ffn_multiplier"] = cfg.ffn_multiplier;
    j["max_positions"] = cfg.max_positions;
    j["rope_base"] = cfg.rope_base;
    j["rope_spread"] = cfg.rope_spread;
    j["write_policy"] = write_policy_name(cfg.write_policy);
    j["precision"] = dtype_name(cfg.precision);
    j["path_full"] = cfg.path_full;
    j["path_chunk"] = cfg.path_chunk;
    j["path_mem"] = cfg.path_mem;
    return j.dump();  // keys emitted in sorted order
}

ModelConfig model_config_from_json(const std::string& text) {
    json j = json::parse(text);
    ModelConfig cfg;
    cfg.vocab_size = j.at("vocab_size").get<std::size_t>();
    cfg.d_model = j.at("d_model").get<std::size_t>();
    cfg.n_heads = j.at("n_heads").get<std::size_t>();
    cfg.n_layers = j.at("n_layers").get<std::size_t>();
    cfg.chunk_size = j.at("chunk_size").get<std::size_t>();
    cfg.memory_slots = j.at("memory_slots").get<std::size_t>();
    cfg.ffn_multiplier = j.at("ffn_multiplier").get<std::size_t>();
    cfg.max_positions = j.at("max_positions").get<std::size_t>();
    cfg.rope_base = j.at("rope_base").get<double>();
    cfg.rope_spread = j.at("rope_spread").get<double>();
    cfg.write_policy = parse_write_policy(j.at("write_policy").get<std::string>());
    cfg.precision =
        j.at("precision").get<std::string>() == "f32" ? DType::F32 : DType::F64;
    cfg.path_full = j.at("path_full").get<bool>();
    cfg.path_chunk = j.at("path_chunk").get<bool>();
    cfg.path_mem = j.at("path_mem").get<bool>();
    cfg.validate();
    return cfg;
}

void save_checkpoint(const std::string& path, const Model& model,
                     const std::vector<MemoryBank>& banks) {
    if (banks.size() != model.config().n_layers) {
        throw std::invalid_argument("checkpoint: expected one bank per layer");
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for write");
    os.write("HCTX", 4);
    write_pod<std::uint32_t>(os, kCheckpointVersion);
    const std::string cfg_json = model_config_to_json(model.config());
    write_pod<std::uint64_t>(os, cfg_json.size());
    os.write(cfg_json.data(), static_cast<std::streamsize>(cfg_json.size()));

    const auto& names = model.params().names();
    write_pod<std::uint64_t>(os, names.size() + 2 * banks.size());
    for (const std::string& name : names) {
        write_tensor(os, name, model.params().get(name));
    }
    for (std::size_t l = 0; l < banks.size(); ++l) {
        const std::string base = "layer" + std::to_string(l) + ".memory";
        write_tensor(os, base, banks[l].as_matrix());
        write_tensor(os, base + "_occupancy",
                     Tensor::from_values({1},
                                         {static_cast<double>(banks[l].occupancy())},
                                         banks[l].dtype()));
    }
    if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "HCTX", 4) != 0) {
        throw std::runtime_error("checkpoint: bad magic in " + path);
    }
    const std::uint32_t version = read_pod<std::uint32_t>(is);
    if (version != kCheckpointVersion) {
        throw std::runtime_error("checkpoint: unsupported version " +
                                 std::to_string(version));
    }
    const std::uint64_t cfg_len = read_pod<std::uint64_t>(is);
    std::string cfg_json(cfg_len, '\0');
    is.read(cfg_json.data(), static_cast<std::streamsize>(cfg_len));
    if (!is) throw std::runtime_error("checkpoint: truncated config block");
    const ModelConfig cfg = model_config_from_json(cfg_json);

    LoadedCheckpoint out{Model(cfg, 0), {}};
    const std::uint64_t n_tensors = read_pod<std::uint64_t>(is);
    std::vector<Tensor> bank_matrices(cfg.n_layers);
    std::vector<std::size_t> bank_occupancy(cfg.n_layers, 0);
    std::vector<bool> have_bank(cfg.n_layers, false);
    for (std::uint64_t i = 0; i < n_tensors; ++i) {
        NamedTensor nt = read_tensor(is);
        bool consumed = false;
        for (std::size_t l = 0; l < cfg.n_layers; ++l) {
            const std::string base = "layer" + std::to_string(l) + ".memory";
            if (nt.name == base) {
                bank_matrices[l] = nt.tensor;
                have_bank[l] = true;
                consumed = true;
            } else if (nt.name == base + "_occupancy") {
                bank_occupancy[l] = static_cast<std::size_t>(nt.tensor.value());
                consumed = true;
            }
        }
        if (consumed) continue;
        Tensor& p = out.model.params().get(nt.name);
        if (p.shape() != nt.tensor.shape()) {
            throw std::runtime_error("checkpoint: shape mismatch for " + nt.name);
        }
        std::copy(nt.tensor.data(), nt.tensor.data() + nt.tensor.numel(), p.data());
    }
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        if (!have_bank[l]) throw std::runtime_error("checkpoint: missing memory bank");
        out.banks.push_back(MemoryBank::from_matrix(bank_matrices[l], bank_occupancy[l]));
    }
    return out;
}

}  // namespace hctx
