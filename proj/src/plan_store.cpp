#include "prism/plan_store.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace prism::store {

const char* to_string(FormatErrorKind k) {
    switch (k) {
        case FormatErrorKind::Io: return "io";
        case FormatErrorKind::BadMagic: return "bad-magic";
        case FormatErrorKind::VersionMismatch: return "version-mismatch";
        case FormatErrorKind::Truncated: return "truncated";
        case FormatErrorKind::DimMismatch: return "dim-mismatch";
        case FormatErrorKind::NotOrthonormal: return "not-orthonormal";
        case FormatErrorKind::InvalidField: return "invalid-field";
    }
    return "?";
}

PlanFormatError::PlanFormatError(FormatErrorKind kind, const std::string& message, std::optional<std::size_t> record)
    : std::runtime_error(std::string("plan file (") + to_string(kind) + "): " + message +
                         (record ? " [record " + std::to_string(*record) + "]" : std::string())),
      kind_(kind),
      record_(record) {}

namespace {

constexpr std::uint8_t kFlagKeys = 1;
constexpr std::uint8_t kFlagValues = 2;
constexpr double kOrthoTolerance = 1e-9;

class Writer {
public:
    void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
    template <typename T>
    void uint(T v) {
        for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
    std::string take() { return std::move(out_); }
    void reserve(std::size_t n) { out_.reserve(n); }

private:
    std::string out_;
};

class Reader {
public:
    explicit Reader(const std::string& in) : in_(in) {}

    bool has(std::size_t n) const { return in_.size() - pos_ >= n; }
    std::size_t remaining() const { return in_.size() - pos_; }

    template <typename T>
    T uint() {
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i)
            v |= static_cast<T>(static_cast<T>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i));
        pos_ += sizeof(T);
        return v;
    }
    double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }
    const char* raw(std::size_t n) {
        const char* p = in_.data() + pos_;
        pos_ += n;
        return p;
    }

private:
    const std::string& in_;
    std::size_t pos_ = 0;
};

constexpr std::size_t kHeaderBytes = 8 + 4 + 3 * 4 + 4 + 5 * 8 + 1 + 8;
constexpr std::size_t kRecordFixedBytes = 2 + 2 + 1 + 2 + 8 + 8;

void write_record(Writer& w, const learner::HeadProjection& hp) {
    w.uint(static_cast<std::uint16_t>(hp.layer));
    w.uint(static_cast<std::uint16_t>(hp.head));
    w.uint(static_cast<std::uint8_t>(hp.channel));
    w.uint(static_cast<std::uint16_t>(hp.rank()));
    w.f64(hp.discriminability);
    w.f64(hp.weight);
    for (double x : hp.basis.vectors().data()) w.f64(x);
}

}  // namespace

std::string encode_plan(const SteeringPlan& plan) {
    try {
        plan.validate();
    } catch (const learner::LearnerError& e) {
        throw PlanFormatError(FormatErrorKind::InvalidField, std::string("refusing to save: ") + e.what());
    }
    constexpr std::size_t kU16 = std::numeric_limits<std::uint16_t>::max();
    if (plan.n_layers > kU16 || plan.n_heads > kU16 || plan.head_dim > kU16) {
        throw PlanFormatError(FormatErrorKind::InvalidField, "dims exceed the 16-bit record fields");
    }
    Writer w;
    std::size_t total = kHeaderBytes;
    for (const auto& hp : plan.key_heads) total += kRecordFixedBytes + 8 * hp.rank() * plan.head_dim;
    for (const auto& hp : plan.value_heads) total += kRecordFixedBytes + 8 * hp.rank() * plan.head_dim;
    w.reserve(total);

    w.bytes(kMagic, sizeof kMagic);
    w.uint(kVersion);
    w.uint(static_cast<std::uint32_t>(plan.n_layers));
    w.uint(static_cast<std::uint32_t>(plan.n_heads));
    w.uint(static_cast<std::uint32_t>(plan.head_dim));
    const auto& c = plan.config;
    w.uint(static_cast<std::uint8_t>(c.energy == linalg::EnergyDefinition::Squared ? 1 : 0));
    w.uint(static_cast<std::uint8_t>(c.mode));
    w.uint(static_cast<std::uint8_t>(c.scheme));
    w.uint(static_cast<std::uint8_t>(c.zero_rank_below_delta_min ? 1 : 0));
    w.f64(c.gamma);
    w.f64(c.delta_min);
    w.f64(c.binary_threshold);
    w.f64(plan.g_k);
    w.f64(plan.g_v);
    w.uint(static_cast<std::uint8_t>(kFlagKeys | (plan.has_values() ? kFlagValues : 0)));
    w.uint(plan.fingerprint);
    for (const auto& hp : plan.key_heads) write_record(w, hp);
    for (const auto& hp : plan.value_heads) write_record(w, hp);
    return w.take();
}

SteeringPlan decode_plan(const std::string& bytes, const std::optional<PlanDims>& expected) {
    using K = FormatErrorKind;
    Reader r(bytes);
    if (!r.has(sizeof kMagic) || std::memcmp(r.raw(sizeof kMagic), kMagic, sizeof kMagic) != 0) {
        throw PlanFormatError(K::BadMagic, "missing PRSMPLAN magic");
    }
    if (!r.has(4)) throw PlanFormatError(K::Truncated, "header ends before the version field");
    const auto version = r.uint<std::uint32_t>();
    if (version != kVersion) {
        throw PlanFormatError(K::VersionMismatch,
                              "version " + std::to_string(version) + ", expected " + std::to_string(kVersion));
    }
    if (!r.has(kHeaderBytes - 12)) throw PlanFormatError(K::Truncated, "header is incomplete");

    SteeringPlan plan;
    plan.n_layers = r.uint<std::uint32_t>();
    plan.n_heads = r.uint<std::uint32_t>();
    plan.head_dim = r.uint<std::uint32_t>();
    if (plan.n_layers == 0 || plan.n_heads == 0 || plan.head_dim == 0) {
        throw PlanFormatError(K::InvalidField, "zero model dimension in header");
    }
    if (expected && (expected->n_layers != plan.n_layers || expected->n_heads != plan.n_heads ||
                     expected->head_dim != plan.head_dim)) {
        throw PlanFormatError(K::DimMismatch, "plan is for L=" + std::to_string(plan.n_layers) +
                                                  ", n_h=" + std::to_string(plan.n_heads) + ", d=" +
                                                  std::to_string(plan.head_dim) + " but the model has L=" +
                                                  std::to_string(expected->n_layers) + ", n_h=" +
                                                  std::to_string(expected->n_heads) + ", d=" +
                                                  std::to_string(expected->head_dim));
    }
    auto& c = plan.config;
    const auto energy = r.uint<std::uint8_t>();
    const auto mode = r.uint<std::uint8_t>();
    const auto scheme = r.uint<std::uint8_t>();
    const auto zero_rank = r.uint<std::uint8_t>();
    if (energy > 1 || mode > 1 || scheme > 2 || zero_rank > 1) {
        throw PlanFormatError(K::InvalidField, "unknown enum value in learner config");
    }
    c.energy = energy ? linalg::EnergyDefinition::Squared : linalg::EnergyDefinition::FirstPower;
    c.mode = static_cast<learner::ProjectionMode>(mode);
    c.scheme = static_cast<learner::WeightScheme>(scheme);
    c.zero_rank_below_delta_min = zero_rank == 1;
    c.gamma = r.f64();
    c.delta_min = r.f64();
    c.binary_threshold = r.f64();
    plan.g_k = r.f64();
    plan.g_v = r.f64();
    const auto flags = r.uint<std::uint8_t>();
    plan.fingerprint = r.uint<std::uint64_t>();
    if ((flags & ~(kFlagKeys | kFlagValues)) != 0 || !(flags & kFlagKeys)) {
        throw PlanFormatError(K::InvalidField, "bad channel flags");
    }
    try {
        c.validate();
    } catch (const learner::LearnerError& e) {
        throw PlanFormatError(K::InvalidField, e.what());
    }

    const std::size_t per_channel = plan.n_layers * plan.n_heads;
    const std::size_t n_records = per_channel * ((flags & kFlagValues) ? 2 : 1);
    const std::size_t d = plan.head_dim;
    for (std::size_t i = 0; i < n_records; ++i) {
        const auto channel = i < per_channel ? contrastive::Channel::Key : contrastive::Channel::Value;
        const std::size_t slot = i % per_channel;
        if (!r.has(kRecordFixedBytes)) throw PlanFormatError(K::Truncated, "record header cut short", i);
        learner::HeadProjection hp;
        hp.layer = r.uint<std::uint16_t>();
        hp.head = r.uint<std::uint16_t>();
        const auto ch = r.uint<std::uint8_t>();
        const std::size_t rank = r.uint<std::uint16_t>();
        hp.discriminability = r.f64();
        hp.weight = r.f64();
        hp.channel = channel;
        if (hp.layer != slot / plan.n_heads || hp.head != slot % plan.n_heads || ch != static_cast<std::uint8_t>(channel)) {
            throw PlanFormatError(K::InvalidField, "record out of order or wrong channel", i);
        }
        if (rank > d) throw PlanFormatError(K::InvalidField, "rank exceeds head_dim", i);
        if (!(hp.discriminability >= 0.0) || !std::isfinite(hp.discriminability) || !(hp.weight >= 0.0) ||
            !std::isfinite(hp.weight)) {
            throw PlanFormatError(K::InvalidField, "D and w must be finite and >= 0", i);
        }
        if (!r.has(8 * rank * d)) throw PlanFormatError(K::Truncated, "basis data cut short", i);
        linalg::Matrix vecs(rank, d);
        for (double& x : vecs.data()) x = r.f64();
        if (!vecs.all_finite()) throw PlanFormatError(K::InvalidField, "non-finite basis entry", i);
        hp.basis = linalg::OrthonormalBasis(d, std::move(vecs));
        if (hp.basis.orthonormality_error() > kOrthoTolerance) {
            throw PlanFormatError(K::NotOrthonormal, "basis columns are not orthonormal within 1e-9", i);
        }
        (channel == contrastive::Channel::Key ? plan.key_heads : plan.value_heads).push_back(std::move(hp));
    }
    if (r.remaining() != 0) throw PlanFormatError(K::InvalidField, std::to_string(r.remaining()) + " trailing bytes");
    try {
        plan.validate();
    } catch (const learner::LearnerError& e) {
        throw PlanFormatError(K::InvalidField, e.what());
    }
    return plan;
}

void save_plan(const SteeringPlan& plan, const std::filesystem::path& path) {
    const std::string bytes = encode_plan(plan);
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw PlanFormatError(FormatErrorKind::Io, "cannot open " + tmp.string() + " for writing");
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        f.flush();
        if (!f) throw PlanFormatError(FormatErrorKind::Io, "write failed: " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        throw PlanFormatError(FormatErrorKind::Io, "rename to " + path.string() + " failed: " + ec.message());
    }
}

SteeringPlan load_plan(const std::filesystem::path& path, const std::optional<PlanDims>& expected) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw PlanFormatError(FormatErrorKind::Io, "cannot open " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return decode_plan(ss.str(), expected);
}

std::string plan_summary_json(const SteeringPlan& plan) {
    using nlohmann::json;
    char fp[20];
    std::snprintf(fp, sizeof fp, "%016llx", static_cast<unsigned long long>(plan.fingerprint));
    json j;
    j["format"] = "PRSMPLAN";
    j["version"] = kVersion;
    j["dims"] = {{"n_layers", plan.n_layers}, {"n_heads", plan.n_heads}, {"head_dim", plan.head_dim}};
    const auto& c = plan.config;
    j["config"] = {{"gamma", c.gamma},
                   {"delta_min", c.delta_min},
                   {"mode", learner::to_string(c.mode)},
                   {"weights", learner::to_string(c.scheme)},
                   {"binary_threshold", c.binary_threshold},
                   {"energy", linalg::to_string(c.energy)},
                   {"zero_rank_below_delta_min", c.zero_rank_below_delta_min}};
    j["g_k"] = plan.g_k;
    j["g_v"] = plan.g_v;
    j["fingerprint"] = fp;
    json heads = json::array();
    auto dump = [&heads](const std::vector<learner::HeadProjection>& hs) {
        for (const auto& hp : hs) {
            heads.push_back({{"layer", hp.layer},
                             {"head", hp.head},
                             {"channel", contrastive::to_string(hp.channel)},
                             {"rank", hp.rank()},
                             {"D", hp.discriminability},
                             {"w", hp.weight}});
        }
    };
    dump(plan.key_heads);
    dump(plan.value_heads);
    j["heads"] = std::move(heads);
    return j.dump(2) + "\n";
}

}  // namespace prism::store
