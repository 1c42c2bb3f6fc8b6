#include <cstring>
#include <fstream>
#include <sstream>

#include "purgegate/errors.hpp"
#include "purgegate/model.hpp"

namespace pg {

namespace {

constexpr char kMagic[4] = {'P', 'G', 'W', '1'};
constexpr std::uint16_t kVersion = 1;

std::string dims_str(const std::vector<std::size_t>& dims) {
    std::string s;
    for (const std::size_t d : dims) s += (s.empty() ? "" : "x") + std::to_string(d);
    return s;
}

template <typename T>
void write_pod(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const char* what) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw FormatError(std::string("truncated weights file while reading ") + what);
    return v;
}

void write_tensor(std::ostream& out, const std::string& name, const std::vector<std::size_t>& dims,
                  const double* data, std::size_t size) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(dims.size()));
    for (const std::size_t d : dims) write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (std::size_t i = 0; i < size; ++i) write_pod<float>(out, static_cast<float>(data[i]));
}

struct RawTensor {
    std::string name;
    std::vector<std::size_t> dims;
    Vector data;
};

RawTensor read_tensor(std::istream& in) {
    RawTensor t;
    const auto name_len = read_pod<std::uint32_t>(in, "tensor name length");
    t.name.resize(name_len);
    in.read(t.name.data(), name_len);
    if (!in) throw FormatError("truncated weights file while reading tensor name");
    const auto rank = read_pod<std::uint32_t>(in, "tensor rank");
    std::size_t size = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        t.dims.push_back(read_pod<std::uint32_t>(in, "tensor dims"));
        size *= t.dims.back();
    }
    t.data.resize(size);
    for (std::size_t i = 0; i < size; ++i)
        t.data[i] = static_cast<double>(read_pod<float>(in, t.name.c_str()));
    return t;
}

void serialize(const ModelWeights& w, const std::vector<ExtraTensor>& extras, std::ostream& out) {
    const ModelConfig& c = w.config;
    out.write(kMagic, 4);
    write_pod<std::uint16_t>(out, kVersion);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(c.d));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(c.n_blocks));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(c.n_heads));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(c.token_count));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(c.k));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(c.n_classes));
    write_pod<double>(out, c.ln_eps);
    write_pod<double>(out, w.embed_bn.momentum);

    auto views = state_views(const_cast<ModelWeights&>(w));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(views.size() + extras.size()));
    for (const TensorView& v : views) write_tensor(out, v.name, v.dims, v.data, v.size);
    for (const ExtraTensor& e : extras) write_tensor(out, e.name, e.dims, e.data.data(), e.data.size());
}

} // namespace

void save_weights(const ModelWeights& w, const std::string& path,
                  const std::vector<ExtraTensor>& extras) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for write: " + path);
    serialize(w, extras, out);
    if (!out) throw IoError("write failed: " + path);
}

LoadedWeights load_weights(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);

    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad PGW1 magic in " + path);
    const auto version = read_pod<std::uint16_t>(in, "version");
    if (version != kVersion)
        throw FormatError("unsupported PGW1 version " + std::to_string(version) + " in " + path);

    ModelConfig c;
    c.d = read_pod<std::uint32_t>(in, "config.d");
    c.n_blocks = read_pod<std::uint32_t>(in, "config.n_blocks");
    c.n_heads = read_pod<std::uint32_t>(in, "config.n_heads");
    c.token_count = read_pod<std::uint32_t>(in, "config.token_count");
    c.k = read_pod<std::uint32_t>(in, "config.k");
    c.n_classes = read_pod<std::uint32_t>(in, "config.n_classes");
    c.ln_eps = read_pod<double>(in, "config.ln_eps");
    const double bn_momentum = read_pod<double>(in, "config.bn_momentum");
    c.validate();

    LoadedWeights result;
    result.weights = init_weights(c, 0);
    result.weights.embed_bn.momentum = bn_momentum;

    auto views = state_views(result.weights);
    std::vector<char> seen(views.size(), 0);

    const auto count = read_pod<std::uint32_t>(in, "tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
        RawTensor t = read_tensor(in);
        bool matched = false;
        for (std::size_t v = 0; v < views.size(); ++v) {
            if (views[v].name != t.name) continue;
            if (views[v].dims != t.dims)
                throw FormatError("shape mismatch for tensor '" + t.name + "' in " + path +
                                  ": file has " + dims_str(t.dims) + ", config expects " +
                                  dims_str(views[v].dims));
            std::copy(t.data.begin(), t.data.end(), views[v].data);
            seen[v] = 1;
            matched = true;
            break;
        }
        if (!matched) result.extras.push_back({t.name, t.dims, std::move(t.data)});
    }
    for (std::size_t v = 0; v < views.size(); ++v)
        if (!seen[v]) throw FormatError("missing tensor '" + views[v].name + "' in " + path);
    return result;
}

std::uint64_t weights_checksum(const ModelWeights& w) {
    std::ostringstream buf(std::ios::binary);
    serialize(w, {}, buf);
    const std::string bytes = buf.str();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const char ch : bytes) {
        h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(ch));
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace pg
