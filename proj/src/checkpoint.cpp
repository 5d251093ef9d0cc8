#include "bline/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

namespace bline {

namespace {

constexpr char kMagic[4] = {'B', 'L', 'N', 'C'};

struct Block {
    std::string name;
    std::vector<long> shape;
    double* data;
    long size;
};

// Every persistent buffer of the active variant, in a stable order.
// Batchnorm running moments ride along as rank-1 blocks.
std::vector<Block> blocks_of(ModelParams& p) {
    std::vector<Block> out;
    auto push = [&](std::string name, Tensor& t) {
        out.push_back(Block{std::move(name), t.shape(), t.data(), t.size()});
    };
    auto push_arr = [&](std::string name, Array& a) {
        out.push_back(Block{std::move(name), {a.size()}, a.data(), a.size()});
    };
    for (int l = 0; l < 4; ++l) {
        ConvBlock& cb = p.cnn.conv[static_cast<size_t>(l)];
        const std::string base = "cnn.conv" + std::to_string(l) + ".";
        push(base + "kernels", cb.kernels);
        push(base + "bias", cb.bias);
        push(base + "gamma", cb.gamma);
        push(base + "beta", cb.beta);
        push_arr(base + "running_mean", cb.bn.running_mean);
        push_arr(base + "running_var", cb.bn.running_var);
    }
    push("cnn.fc.weights", p.cnn.fc_weights);
    push("cnn.fc.bias", p.cnn.fc_bias);
    if (variant_has_lstm(p.variant)) {
        push("feat.gamma", p.feat_gamma);
        push("feat.beta", p.feat_beta);
        push_arr("feat.running_mean", p.feat_bn.running_mean);
        push_arr("feat.running_var", p.feat_bn.running_var);
        const char* dirs[2] = {"fwd", "bwd"};
        LstmDirection* dp[2] = {&p.lstm.fwd, &p.lstm.bwd};
        for (int d = 0; d < 2; ++d) {
            const std::string base = std::string("lstm.") + dirs[d] + ".";
            push(base + "w_input", dp[d]->w_input);
            push(base + "w_hidden", dp[d]->w_hidden);
            push(base + "bias", dp[d]->bias);
        }
    }
    if (variant_has_attention(p.variant)) push("attn.w", p.attn.w);
    push("head.weights", p.head.weights);
    push("head.bias", p.head.bias);
    return out;
}

template <typename T>
void write_pod(std::ofstream& f, T v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& f) {
    T v{};
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!f) throw CheckpointError("checkpoint: truncated file");
    return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, ModelParams& p) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("checkpoint: cannot open for writing: " + path.string());
    f.write(kMagic, 4);
    write_pod<uint32_t>(f, kCheckpointVersion);
    write_pod<uint32_t>(f, static_cast<uint32_t>(p.variant));
    write_pod<int64_t>(f, p.geom.frame_size);
    for (long c : p.geom.channels) write_pod<int64_t>(f, c);
    write_pod<int64_t>(f, p.geom.feature_dim);
    write_pod<int64_t>(f, p.geom.hidden_size);
    auto blocks = blocks_of(p);
    write_pod<uint32_t>(f, static_cast<uint32_t>(blocks.size()));
    for (const Block& b : blocks) {
        write_pod<uint32_t>(f, static_cast<uint32_t>(b.name.size()));
        f.write(b.name.data(), static_cast<std::streamsize>(b.name.size()));
        write_pod<uint32_t>(f, static_cast<uint32_t>(b.shape.size()));
        for (long e : b.shape) write_pod<int64_t>(f, e);
        f.write(reinterpret_cast<const char*>(b.data), static_cast<std::streamsize>(b.size * 8));
    }
    if (!f) throw CheckpointError("checkpoint: write failed: " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("checkpoint: cannot open: " + path.string());
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kMagic, 4) != 0)
        throw CheckpointError("checkpoint: bad magic in " + path.string());
    const auto version = read_pod<uint32_t>(f);
    if (version != kCheckpointVersion)
        throw CheckpointError("checkpoint: format version mismatch: file has " +
                              std::to_string(version) + ", reader expects " +
                              std::to_string(kCheckpointVersion));
    const auto vtag = read_pod<uint32_t>(f);
    if (vtag > 3) throw CheckpointError("checkpoint: invalid variant tag " + std::to_string(vtag));
    ModelGeometry geom;
    geom.frame_size = read_pod<int64_t>(f);
    for (long& c : geom.channels) c = read_pod<int64_t>(f);
    geom.feature_dim = read_pod<int64_t>(f);
    geom.hidden_size = read_pod<int64_t>(f);

    ModelParams p = init_params(static_cast<Variant>(vtag), geom, 0);
    auto blocks = blocks_of(p);
    std::map<std::string, Block*> by_name;
    for (Block& b : blocks) by_name[b.name] = &b;

    const auto nblocks = read_pod<uint32_t>(f);
    if (nblocks != blocks.size())
        throw CheckpointError("checkpoint: expected " + std::to_string(blocks.size()) +
                              " blocks, file has " + std::to_string(nblocks));
    for (uint32_t i = 0; i < nblocks; ++i) {
        const auto name_len = read_pod<uint32_t>(f);
        std::string name(name_len, '\0');
        f.read(name.data(), name_len);
        const auto rank = read_pod<uint32_t>(f);
        std::vector<long> shape(rank);
        for (long& e : shape) e = read_pod<int64_t>(f);
        auto it = by_name.find(name);
        if (it == by_name.end()) throw CheckpointError("checkpoint: unknown block '" + name + "'");
        Block* b = it->second;
        if (shape != b->shape)
            throw CheckpointError("checkpoint: block '" + name + "' has shape " + shape_str(shape) +
                                  ", expected " + shape_str(b->shape));
        f.read(reinterpret_cast<char*>(b->data), static_cast<std::streamsize>(b->size * 8));
        if (!f) throw CheckpointError("checkpoint: truncated block '" + name + "'");
    }
    return p;
}

}  // namespace bline
