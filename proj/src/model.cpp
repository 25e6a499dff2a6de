#include "incap/model.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace incap::model {

namespace {

constexpr char kMagic[4] = {'I', 'C', 'K', 'P'};
constexpr uint32_t kFormatVersion = 1;

void put_u32(std::string& buf, uint32_t v) { buf.append(reinterpret_cast<const char*>(&v), 4); }
void put_i32(std::string& buf, int32_t v) { buf.append(reinterpret_cast<const char*>(&v), 4); }
void put_str(std::string& buf, const std::string& s) {
    put_u32(buf, static_cast<uint32_t>(s.size()));
    buf.append(s);
}

struct Reader {
    const std::string& buf;
    size_t pos = 0;

    void need(size_t n) const {
        if (pos + n > buf.size()) throw ParseError("checkpoint: truncated file");
    }
    uint32_t u32() {
        need(4);
        uint32_t v;
        std::memcpy(&v, buf.data() + pos, 4);
        pos += 4;
        return v;
    }
    int32_t i32() { return static_cast<int32_t>(u32()); }
    std::string str() {
        uint32_t n = u32();
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

} // namespace

void save_checkpoint(const ModelStateF& st, const std::string& path) {
    std::string buf;
    buf.append(kMagic, 4);
    put_u32(buf, kFormatVersion);
    put_i32(buf, st.cfg.in_channels);
    put_i32(buf, st.cfg.image_size);
    put_i32(buf, st.cfg.conv1_channels);
    put_i32(buf, st.cfg.conv2_channels);
    put_i32(buf, st.cfg.feature_dim);
    put_i32(buf, st.cfg.embed_dim);
    put_i32(buf, st.cfg.hidden_dim);
    put_i32(buf, st.vocab_version);
    put_i32(buf, st.vocab_size);
    put_i32(buf, st.expansion_start);
    put_str(buf, st.rng_state);
    put_u32(buf, static_cast<uint32_t>(st.params.size()));
    for (const auto& [name, t] : st.params) {
        put_str(buf, name);
        put_u32(buf, static_cast<uint32_t>(t.shape.size()));
        for (int d : t.shape) put_i32(buf, d);
        buf.append(reinterpret_cast<const char*>(t.v.data()), t.v.size() * sizeof(float));
    }
    put_u32(buf, static_cast<uint32_t>(st.trainable.size()));
    for (const auto& [name, flag] : st.trainable) {
        put_str(buf, name);
        buf.push_back(flag ? 1 : 0);
    }
    uint64_t sum = fnv1a(buf.data(), buf.size());
    buf.append(reinterpret_cast<const char*>(&sum), 8);

    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
    os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

ModelStateF load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    std::string buf = ss.str();
    if (buf.size() < 16 || std::memcmp(buf.data(), kMagic, 4) != 0)
        throw ParseError("load_checkpoint: " + path + " is not a checkpoint file");
    uint64_t stored;
    std::memcpy(&stored, buf.data() + buf.size() - 8, 8);
    if (stored != fnv1a(buf.data(), buf.size() - 8))
        throw ParseError("load_checkpoint: " + path + " failed its checksum");
    buf.resize(buf.size() - 8);

    Reader r{buf, 4};
    if (r.u32() != kFormatVersion)
        throw ParseError("load_checkpoint: unsupported format version in " + path);
    ModelStateF st;
    st.cfg.in_channels = r.i32();
    st.cfg.image_size = r.i32();
    st.cfg.conv1_channels = r.i32();
    st.cfg.conv2_channels = r.i32();
    st.cfg.feature_dim = r.i32();
    st.cfg.embed_dim = r.i32();
    st.cfg.hidden_dim = r.i32();
    st.vocab_version = r.i32();
    st.vocab_size = r.i32();
    st.expansion_start = r.i32();
    st.rng_state = r.str();
    uint32_t n_params = r.u32();
    for (uint32_t i = 0; i < n_params; ++i) {
        std::string name = r.str();
        uint32_t ndim = r.u32();
        std::vector<int> shape(ndim);
        for (auto& d : shape) d = r.i32();
        Tensor<float> t(shape);
        size_t bytes = t.v.size() * sizeof(float);
        r.need(bytes);
        std::memcpy(t.v.data(), buf.data() + r.pos, bytes);
        r.pos += bytes;
        st.params[name] = std::move(t);
    }
    uint32_t n_mask = r.u32();
    for (uint32_t i = 0; i < n_mask; ++i) {
        std::string name = r.str();
        r.need(1);
        st.trainable[name] = buf[r.pos++] != 0;
    }
    return st;
}

ModelStateF load_checkpoint(const std::string& path, const vocab::Vocabulary& v) {
    ModelStateF st = load_checkpoint(path);
    if (st.vocab_version != v.version() || st.vocab_size != v.size())
        throw ConfigError("load_checkpoint: checkpoint vocab v" +
                          std::to_string(st.vocab_version) + " (" + std::to_string(st.vocab_size) +
                          " tokens) does not match the provided vocabulary v" +
                          std::to_string(v.version()) + " (" + std::to_string(v.size()) +
                          " tokens)");
    return st;
}

uint64_t model_checksum(const ModelStateF& st) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, t] : st.params) {
        h = fnv1a(name.data(), name.size(), h);
        h = fnv1a(t.v.data(), t.v.size() * sizeof(float), h);
    }
    int32_t meta[2] = {st.vocab_version, st.vocab_size};
    return fnv1a(meta, sizeof(meta), h);
}

} // namespace incap::model
