#include "aepm/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include "aepm/errors.hpp"

namespace aepm {

namespace {

constexpr char kMagic[8] = {'A', 'E', 'P', 'M', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    out.append(b, 4);
}

void put_f64(std::string& out, double v) {
    char b[8];
    std::memcpy(b, &v, 8);
    out.append(b, 8);
}

class Reader {
public:
    Reader(const std::string& buf, const std::string& path) : buf_(buf), path_(path) {}

    void raw(void* dst, size_t n) {
        if (pos_ + n > buf_.size()) throw ParseError(path_ + ": truncated checkpoint");
        std::memcpy(dst, buf_.data() + pos_, n);
        pos_ += n;
    }
    uint32_t u32() {
        uint32_t v;
        raw(&v, 4);
        return v;
    }
    double f64() {
        double v;
        raw(&v, 8);
        return v;
    }
    std::string str(size_t n) {
        std::string s(n, '\0');
        raw(s.data(), n);
        return s;
    }
    bool done() const { return pos_ == buf_.size(); }

private:
    const std::string& buf_;
    std::string path_;
    size_t pos_ = 0;
};

} // namespace

void save_checkpoint(const std::string& path, const ModelParameters& params,
                     const CheckpointMeta& meta) {
    const ModelConfig& c = params.config;
    std::string out;
    out.append(kMagic, 8);
    put_u32(out, kVersion);
    put_u32(out, static_cast<uint32_t>(c.joints));
    put_u32(out, static_cast<uint32_t>(c.frames));
    put_u32(out, static_cast<uint32_t>(c.embed_dim));
    put_u32(out, static_cast<uint32_t>(c.layer_pairs));
    put_u32(out, static_cast<uint32_t>(c.samples));
    put_u32(out, static_cast<uint32_t>(c.heads));
    put_u32(out, static_cast<uint32_t>(c.mlp_hidden));
    uint32_t flags = 0;
    if (c.pre_norm) flags |= 1u;
    if (c.squared_norm_loss) flags |= 2u;
    put_u32(out, flags);
    put_u32(out, meta.epochs_completed);
    put_f64(out, meta.best_val_rmse_deg);

    uint32_t count = 0;
    visit_parameters(params, [&](const std::string&, ParamKind, const Tensor&) { ++count; });
    put_u32(out, count);
    visit_parameters(params, [&](const std::string& name, ParamKind, const Tensor& t) {
        put_u32(out, static_cast<uint32_t>(name.size()));
        out.append(name);
        put_u32(out, static_cast<uint32_t>(t.rank()));
        for (int i = 0; i < t.rank(); ++i) put_u32(out, static_cast<uint32_t>(t.dim(i)));
        std::vector<float> payload(static_cast<size_t>(t.size()));
        for (int64_t i = 0; i < t.size(); ++i) payload[static_cast<size_t>(i)] = static_cast<float>(t[i]);
        out.append(reinterpret_cast<const char*>(payload.data()), payload.size() * sizeof(float));
    });

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("write failed for '" + path + "'");
}

ModelParameters load_checkpoint(const std::string& path, CheckpointMeta* meta) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "'");
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    Reader r(buf, path);

    char magic[8];
    r.raw(magic, 8);
    if (std::memcmp(magic, kMagic, 8) != 0) throw ParseError(path + ": not an AEPM checkpoint");
    uint32_t version = r.u32();
    if (version != kVersion)
        throw ParseError(path + ": unsupported checkpoint version " + std::to_string(version));

    ModelConfig c;
    c.joints = static_cast<int>(r.u32());
    c.frames = static_cast<int>(r.u32());
    c.embed_dim = static_cast<int>(r.u32());
    c.layer_pairs = static_cast<int>(r.u32());
    c.samples = static_cast<int>(r.u32());
    c.heads = static_cast<int>(r.u32());
    c.mlp_hidden = static_cast<int>(r.u32());
    uint32_t flags = r.u32();
    c.pre_norm = (flags & 1u) != 0;
    c.squared_norm_loss = (flags & 2u) != 0;
    c.validate();

    CheckpointMeta m;
    m.epochs_completed = r.u32();
    m.best_val_rmse_deg = r.f64();
    if (meta) *meta = m;

    // Build parameters with the right shapes, then overwrite payloads in
    // visitation order, checking names as we go.
    ModelParameters params = init_parameters(c, 0);
    uint32_t count = r.u32();
    uint32_t expected = 0;
    visit_parameters(params, [&](const std::string&, ParamKind, const Tensor&) { ++expected; });
    if (count != expected)
        throw ParseError(path + ": checkpoint stores " + std::to_string(count) +
                         " tensors, config implies " + std::to_string(expected));

    visit_parameters(params, [&](const std::string& name, ParamKind, Tensor& t) {
        uint32_t name_len = r.u32();
        std::string stored = r.str(name_len);
        if (stored != name)
            throw ParseError(path + ": tensor order mismatch, expected '" + name + "', found '" +
                             stored + "'");
        uint32_t rank = r.u32();
        std::vector<int64_t> dims(rank);
        int64_t total = 1;
        for (uint32_t i = 0; i < rank; ++i) {
            dims[i] = static_cast<int64_t>(r.u32());
            total *= dims[i];
        }
        if (static_cast<int>(rank) != t.rank() || total != t.size())
            throw ParseError(path + ": shape mismatch for '" + name + "'");
        std::vector<float> payload(static_cast<size_t>(total));
        r.raw(payload.data(), payload.size() * sizeof(float));
        t.resize(dims);
        for (int64_t i = 0; i < total; ++i) t[i] = static_cast<double>(payload[static_cast<size_t>(i)]);
    });
    if (!r.done()) throw ParseError(path + ": trailing bytes after checkpoint payload");
    return params;
}

} // namespace aepm
