#include "prism/contrastive.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "prism/rng.hpp"

namespace prism::contrastive {

void ContrastiveTriplet::validate() const {
    if (context.empty()) throw ContrastiveError("triplet context is empty");
    if (relevant == irrelevant) throw ContrastiveError("triplet relevant and irrelevant questions are identical");
}

namespace {

// Fisher-Yates draw of the first k items of 0..n-1.
std::vector<std::size_t> draw_distinct(Rng& rng, std::size_t n, std::size_t k) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
}

struct Context {
    std::vector<TokenId> tokens;
    std::vector<TokenId> entities;
    std::vector<TokenId> subjects;
};

Context make_context(Rng& rng, const Vocabulary& vocab, std::span<const std::size_t> subjects) {
    const VocabSpec& spec = vocab.spec();
    Context c;
    for (std::size_t s : subjects) {
        const TokenId e = vocab.entity(static_cast<std::size_t>(rng.below(spec.n_entities)));
        const TokenId v = vocab.value(static_cast<std::size_t>(rng.below(spec.n_values)));
        const TokenId subj = vocab.subject(s);
        const auto f = vocab.fact(e, subj, v);
        c.tokens.insert(c.tokens.end(), f.begin(), f.end());
        c.entities.push_back(e);
        c.subjects.push_back(subj);
    }
    return c;
}

std::vector<TokenId> ask(Rng& rng, const Vocabulary& vocab, const Context& c) {
    const std::size_t i = static_cast<std::size_t>(rng.below(c.subjects.size()));
    return vocab.question(c.entities[i], c.subjects[i]);
}

void append_ids(std::string& out, std::span<const TokenId> ids) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) out.push_back(' ');
        out += std::to_string(ids[i]);
    }
}

std::vector<TokenId> parse_ids(std::string_view field, std::size_t line_no) {
    std::vector<TokenId> ids;
    std::size_t pos = 0;
    while (pos < field.size()) {
        if (field[pos] == ' ') {
            ++pos;
            continue;
        }
        TokenId v = 0;
        const char* begin = field.data() + pos;
        const char* end = field.data() + field.size();
        auto [ptr, ec] = std::from_chars(begin, end, v);
        if (ec != std::errc() || (ptr != end && *ptr != ' ')) {
            throw ContrastiveError("triplet line " + std::to_string(line_no) + ": bad token id");
        }
        ids.push_back(v);
        pos += static_cast<std::size_t>(ptr - begin);
    }
    return ids;
}

}  // namespace

std::vector<ContrastiveTriplet> generate_triplets(std::uint64_t seed, std::size_t n_pairs, const Vocabulary& vocab) {
    if (n_pairs == 0) throw ContrastiveError("n_pairs must be >= 1");
    const VocabSpec& spec = vocab.spec();
    if (spec.n_subjects < 2 * kFactsPerContext) {
        throw ContrastiveError("vocabulary needs >= " + std::to_string(2 * kFactsPerContext) +
                               " subjects to build distinct context pairs");
    }
    Rng rng(seed);
    std::vector<ContrastiveTriplet> out;
    out.reserve(2 * n_pairs);
    for (std::size_t p = 0; p < n_pairs; ++p) {
        const auto subj = draw_distinct(rng, spec.n_subjects, 2 * kFactsPerContext);
        const Context a = make_context(rng, vocab, std::span(subj).first(kFactsPerContext));
        const Context b = make_context(rng, vocab, std::span(subj).subspan(kFactsPerContext));
        const auto qa = ask(rng, vocab, a);
        const auto qb = ask(rng, vocab, b);
        out.push_back({a.tokens, qa, qb});
        out.push_back({b.tokens, qb, qa});
    }
    return out;
}

std::string serialize_triplets(std::span<const ContrastiveTriplet> triplets) {
    std::string out;
    for (const auto& t : triplets) {
        append_ids(out, t.context);
        out.push_back('\t');
        append_ids(out, t.relevant);
        out.push_back('\t');
        append_ids(out, t.irrelevant);
        out.push_back('\n');
    }
    return out;
}

std::vector<ContrastiveTriplet> parse_triplets(const std::string& text) {
    std::vector<ContrastiveTriplet> out;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t nl = text.find('\n', start);
        if (nl == std::string::npos) nl = text.size();
        std::string_view line(text.data() + start, nl - start);
        ++line_no;
        start = nl + 1;
        if (line.empty()) continue;
        const std::size_t t1 = line.find('\t');
        const std::size_t t2 = t1 == std::string_view::npos ? t1 : line.find('\t', t1 + 1);
        if (t2 == std::string_view::npos || line.find('\t', t2 + 1) != std::string_view::npos) {
            throw ContrastiveError("triplet line " + std::to_string(line_no) + ": expected 3 tab-separated fields");
        }
        ContrastiveTriplet t{parse_ids(line.substr(0, t1), line_no), parse_ids(line.substr(t1 + 1, t2 - t1 - 1), line_no),
                             parse_ids(line.substr(t2 + 1), line_no)};
        try {
            t.validate();
        } catch (const ContrastiveError& e) {
            throw ContrastiveError("triplet line " + std::to_string(line_no) + ": " + e.what());
        }
        out.push_back(std::move(t));
    }
    return out;
}

void save_triplets(std::span<const ContrastiveTriplet> triplets, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
    const std::string text = serialize_triplets(triplets);
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!f) throw std::runtime_error("write failed: " + path.string());
}

std::vector<ContrastiveTriplet> load_triplets(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_triplets(ss.str());
}

std::uint64_t data_fingerprint_bytes(const std::string& bytes, std::uint64_t model_seed) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](unsigned char b) {
        h ^= b;
        h *= 0x100000001b3ULL;
    };
    for (char c : bytes) mix(static_cast<unsigned char>(c));
    for (int i = 0; i < 8; ++i) mix(static_cast<unsigned char>(model_seed >> (8 * i)));
    return h;
}

std::uint64_t data_fingerprint(std::span<const ContrastiveTriplet> triplets, std::uint64_t model_seed) {
    return data_fingerprint_bytes(serialize_triplets(triplets), model_seed);
}

const char* to_string(Channel c) { return c == Channel::Key ? "K" : "V"; }

const BankEntry& RepresentationBank::at(std::size_t layer, std::size_t head) const {
    if (layer >= n_layers || head >= n_heads) throw ContrastiveError("bank head index out of range");
    return entries[layer * n_heads + head];
}

BankEntry& RepresentationBank::at(std::size_t layer, std::size_t head) {
    if (layer >= n_layers || head >= n_heads) throw ContrastiveError("bank head index out of range");
    return entries[layer * n_heads + head];
}

std::pair<RepresentationBank, RepresentationBank> extract_banks(const model::ToyModel& model,
                                                                std::span<const ContrastiveTriplet> triplets) {
    if (triplets.empty()) throw ContrastiveError("extract_bank: empty triplet list");
    const auto& cfg = model.config();
    const std::size_t n = triplets.size();

    auto empty_bank = [&](Channel ch) {
        RepresentationBank b;
        b.channel = ch;
        b.n_samples = n;
        b.n_layers = cfg.n_layers;
        b.n_heads = cfg.n_heads;
        b.head_dim = cfg.head_dim;
        b.entries.assign(cfg.n_layers * cfg.n_heads,
                         BankEntry{Matrix(n, cfg.head_dim), Matrix(n, cfg.head_dim), Matrix(n, cfg.head_dim)});
        return b;
    };
    RepresentationBank kb = empty_bank(Channel::Key);
    RepresentationBank vb = empty_bank(Channel::Value);

    auto record = [&](const std::vector<TokenId>& tokens, std::size_t row, Matrix BankEntry::*slot) {
        const auto fr = model::forward(model, tokens);
        const std::size_t last = tokens.size() - 1;
        for (std::size_t l = 0; l < cfg.n_layers; ++l) {
            for (std::size_t h = 0; h < cfg.n_heads; ++h) {
                const auto& ht = fr.trace.at(l, h);
                auto kr = ht.keys.row(last);
                auto vr = ht.values.row(last);
                std::copy(kr.begin(), kr.end(), (kb.at(l, h).*slot).row(row).begin());
                std::copy(vr.begin(), vr.end(), (vb.at(l, h).*slot).row(row).begin());
            }
        }
    };

    for (std::size_t i = 0; i < n; ++i) {
        const auto& t = triplets[i];
        if (t.context.empty()) throw ContrastiveError("triplet " + std::to_string(i) + " has an empty context");
        std::vector<TokenId> plus = t.context;
        plus.insert(plus.end(), t.relevant.begin(), t.relevant.end());
        std::vector<TokenId> minus = t.context;
        minus.insert(minus.end(), t.irrelevant.begin(), t.irrelevant.end());
        if (plus.size() > cfg.max_seq_len || minus.size() > cfg.max_seq_len) {
            throw ContrastiveError("triplet " + std::to_string(i) + " exceeds max_seq_len");
        }
        record(t.context, i, &BankEntry::h);
        record(plus, i, &BankEntry::h_plus);
        record(minus, i, &BankEntry::h_minus);
    }
    return {std::move(kb), std::move(vb)};
}

RepresentationBank extract_bank(const model::ToyModel& model, std::span<const ContrastiveTriplet> triplets,
                                Channel channel) {
    auto banks = extract_banks(model, triplets);
    return channel == Channel::Key ? std::move(banks.first) : std::move(banks.second);
}

}  // namespace prism::contrastive
