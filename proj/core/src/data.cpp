#include "jachess/data.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "jachess/model.hpp"

namespace jachess::data {

TaskKind parse_task_kind(const std::string& name) {
    if (name == "single-binary") return TaskKind::kSingleBinary;
    if (name == "pair-binary") return TaskKind::kPairBinary;
    if (name == "multi-class") return TaskKind::kMultiClass;
    if (name == "regression") return TaskKind::kRegression;
    throw ConfigError("unknown task kind '" + name + "'");
}

const char* task_kind_name(TaskKind kind) {
    switch (kind) {
        case TaskKind::kSingleBinary: return "single-binary";
        case TaskKind::kPairBinary: return "pair-binary";
        case TaskKind::kMultiClass: return "multi-class";
        case TaskKind::kRegression: return "regression";
    }
    return "unknown";
}

std::vector<int> Example::input_tokens() const {
    if (!is_pair) return tokens_a;
    return model::join_pair(tokens_a, tokens_b);
}

void TaskSpec::validate() const {
    if (vocab_size <= model::kNumSpecialTokens + 4)
        throw ConfigError("task '" + name + "': vocab too small for generators");
    if (seq_len < 6) throw ConfigError("task '" + name + "': seq_len must be at least 6");
    const bool pair = kind == TaskKind::kPairBinary || kind == TaskKind::kRegression;
    (void)pair;
    if (kind == TaskKind::kMultiClass && num_classes < 3)
        throw ConfigError("task '" + name + "': multi-class needs >= 3 classes");
    if ((kind == TaskKind::kSingleBinary || kind == TaskKind::kPairBinary) && num_classes != 2)
        throw ConfigError("task '" + name + "': binary tasks use 2 classes");
    if (metric != "accuracy" && metric != "f1" && metric != "matthews" && metric != "spearman")
        throw ConfigError("task '" + name + "': unknown metric '" + metric + "'");
    if (metric == "spearman" && kind != TaskKind::kRegression)
        throw ConfigError("task '" + name + "': spearman is a regression metric");
    if (kind == TaskKind::kRegression && metric != "spearman")
        throw ConfigError("task '" + name + "': regression uses the spearman metric");
}

std::uint64_t fnv1a64(std::string_view text) {
    std::uint64_t hash = 1469598103934665603ULL;
    for (unsigned char c : text) {
        hash ^= c;
        hash *= 1099511628211ULL;
    }
    return hash;
}

namespace {

constexpr int kFirstRegular = model::kNumSpecialTokens;  // 2

int random_token(Rng& rng, int vocab, std::span<const int> exclude = {}) {
    for (;;) {
        const int t = kFirstRegular + static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(vocab - kFirstRegular)));
        bool banned = false;
        for (int e : exclude) banned = banned || (t == e);
        if (!banned) return t;
    }
}

// -- token-majority: which of two marker tokens occurs more often ---------

constexpr int kMarkA = 2;
constexpr int kMarkB = 3;

Example gen_token_majority(const TaskSpec& spec, Rng& rng) {
    const int len = spec.seq_len;
    const int markers = std::max(4, 2 * len / 3);
    // Counts with margin >= 2 so the label is never a coin flip.
    int count_a;
    do {
        count_a = static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(markers + 1)));
    } while (std::abs(2 * count_a - markers) < 2);
    Example ex;
    ex.tokens_a.reserve(static_cast<std::size_t>(len));
    for (int i = 0; i < count_a; ++i) ex.tokens_a.push_back(kMarkA);
    for (int i = count_a; i < markers; ++i) ex.tokens_a.push_back(kMarkB);
    const std::array<int, 2> banned{kMarkA, kMarkB};
    for (int i = markers; i < len; ++i) ex.tokens_a.push_back(random_token(rng, spec.vocab_size, banned));
    rng.shuffle(ex.tokens_a);
    ex.target = count_a > markers - count_a ? 1.0 : 0.0;
    return ex;
}

// -- pattern-containment: a fixed trigram appears contiguously ------------

constexpr std::array<int, 3> kTrigram{5, 6, 7};

bool contains_trigram(const std::vector<int>& tokens) {
    for (std::size_t i = 0; i + 2 < tokens.size(); ++i)
        if (tokens[i] == kTrigram[0] && tokens[i + 1] == kTrigram[1] && tokens[i + 2] == kTrigram[2]) return true;
    return false;
}

Example gen_pattern_containment(const TaskSpec& spec, Rng& rng) {
    const int len = spec.seq_len;
    // Small alphabet including the trigram tokens, so unigram statistics
    // carry little signal and order matters.
    const int lo = 5, hi = 12;
    const bool positive = rng.uniform_below(2) == 1;
    Example ex;
    for (;;) {
        ex.tokens_a.clear();
        for (int i = 0; i < len; ++i)
            ex.tokens_a.push_back(lo + static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(hi - lo))));
        if (positive) {
            const int at = static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(len - 2)));
            ex.tokens_a[static_cast<std::size_t>(at)] = kTrigram[0];
            ex.tokens_a[static_cast<std::size_t>(at) + 1] = kTrigram[1];
            ex.tokens_a[static_cast<std::size_t>(at) + 2] = kTrigram[2];
            break;
        }
        if (!contains_trigram(ex.tokens_a)) break;
    }
    ex.target = positive ? 1.0 : 0.0;
    return ex;
}

// -- pair tasks: token-set overlap -----------------------------------------

// Distinct draws from the pair alphabet [first, first + alphabet).
std::vector<int> distinct_tokens(Rng& rng, int count, int alphabet, std::span<const int> exclude) {
    std::set<int> chosen;
    for (int e : exclude) chosen.insert(e);
    std::vector<int> out;
    while (static_cast<int>(out.size()) < count) {
        const int t = kFirstRegular + static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(alphabet)));
        if (chosen.insert(t).second) out.push_back(t);
    }
    return out;
}

double jaccard(const std::vector<int>& a, const std::vector<int>& b) {
    const std::set<int> sa(a.begin(), a.end());
    const std::set<int> sb(b.begin(), b.end());
    int shared = 0;
    for (int t : sa) shared += sb.count(t) ? 1 : 0;
    const int unioned = static_cast<int>(sa.size() + sb.size()) - shared;
    return unioned == 0 ? 0.0 : static_cast<double>(shared) / unioned;
}

Example gen_pair_overlap_impl(const TaskSpec& spec, Rng& rng, bool regression) {
    const int half = spec.pair_half;
    const int alphabet = spec.pair_alphabet;
    if (alphabet < 2 * half) throw DataError("pair generator: alphabet too small for disjoint sides");
    int shared;
    if (regression) {
        shared = static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(half + 1)));
    } else {
        // Wide margin around the 0.5 Jaccard threshold: sides share almost
        // everything or almost nothing.
        const bool positive = rng.uniform_below(2) == 1;
        shared = positive ? half - static_cast<int>(rng.uniform_below(2))
                          : static_cast<int>(rng.uniform_below(2));
    }
    Example ex;
    ex.is_pair = true;
    ex.tokens_a = distinct_tokens(rng, half, alphabet, {});
    ex.tokens_b.assign(ex.tokens_a.begin(), ex.tokens_a.begin() + shared);
    std::vector<int> fresh = distinct_tokens(rng, half - shared, alphabet, ex.tokens_a);
    ex.tokens_b.insert(ex.tokens_b.end(), fresh.begin(), fresh.end());
    rng.shuffle(ex.tokens_a);
    rng.shuffle(ex.tokens_b);
    const double j = jaccard(ex.tokens_a, ex.tokens_b);
    ex.target = regression ? j : (j >= 0.5 ? 1.0 : 0.0);
    return ex;
}

// -- three-way-count: argmax over three marker counts ----------------------

constexpr std::array<int, 3> kTriMarkers{2, 3, 4};

Example gen_three_way_count(const TaskSpec& spec, Rng& rng) {
    const int len = spec.seq_len;
    const int markers = std::max(6, 2 * len / 3);
    const int winner = static_cast<int>(rng.uniform_below(3));
    std::array<int, 3> counts{};
    for (;;) {
        int remaining = markers;
        for (int c = 0; c < 3; ++c) {
            counts[static_cast<std::size_t>(c)] =
                c == 2 ? remaining : static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(remaining + 1)));
            remaining -= counts[static_cast<std::size_t>(c)];
        }
        int best = 0;
        for (int c = 1; c < 3; ++c)
            if (counts[static_cast<std::size_t>(c)] > counts[static_cast<std::size_t>(best)]) best = c;
        bool strict = true;
        for (int c = 0; c < 3; ++c)
            if (c != best && counts[static_cast<std::size_t>(best)] - counts[static_cast<std::size_t>(c)] < 2)
                strict = false;
        if (strict && best == winner) break;
    }
    Example ex;
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < counts[static_cast<std::size_t>(c)]; ++i)
            ex.tokens_a.push_back(kTriMarkers[static_cast<std::size_t>(c)]);
    const std::array<int, 3> banned{kTriMarkers[0], kTriMarkers[1], kTriMarkers[2]};
    while (static_cast<int>(ex.tokens_a.size()) < len)
        ex.tokens_a.push_back(random_token(rng, spec.vocab_size, banned));
    rng.shuffle(ex.tokens_a);
    ex.target = static_cast<double>(winner);
    return ex;
}

Example generate_one(const TaskSpec& spec, Rng& rng) {
    if (spec.generator == "token-majority") return gen_token_majority(spec, rng);
    if (spec.generator == "pattern-containment") return gen_pattern_containment(spec, rng);
    if (spec.generator == "pair-overlap") return gen_pair_overlap_impl(spec, rng, false);
    if (spec.generator == "three-way-count") return gen_three_way_count(spec, rng);
    if (spec.generator == "overlap-score") return gen_pair_overlap_impl(spec, rng, true);
    throw DataError("unknown generator '" + spec.generator + "'");
}

std::string instance_key(const Example& ex) {
    std::string key;
    for (int t : ex.tokens_a) key += std::to_string(t) + ",";
    key += "|";
    for (int t : ex.tokens_b) key += std::to_string(t) + ",";
    return key;
}

}  // namespace

SplitSet generate_task(const TaskSpec& spec, const Sizes& sizes, std::uint64_t seed) {
    spec.validate();
    if (sizes.labeled <= 0 || sizes.test <= 0 || sizes.unlabeled < 0)
        throw DataError("generate_task: labeled and test sizes must be positive");
    const int total = sizes.labeled + sizes.unlabeled + sizes.test;
    Rng rng = Rng::derive(seed, {fnv1a64(spec.name), fnv1a64(spec.generator)});

    std::vector<Example> pool;
    pool.reserve(static_cast<std::size_t>(total));
    std::set<std::string> seen;
    int attempts = 0;
    while (static_cast<int>(pool.size()) < total) {
        Example ex = generate_one(spec, rng);
        if (seen.insert(instance_key(ex)).second) {
            pool.push_back(std::move(ex));
        } else if (++attempts > 50 * total) {
            throw DataError("generate_task: instance space too small for requested sizes");
        }
    }
    SplitSet out = make_splits(std::move(pool), sizes, seed);
    return out;
}

SplitSet make_splits(std::vector<Example> pool, const Sizes& sizes, std::uint64_t seed) {
    const int total = sizes.labeled + sizes.unlabeled + sizes.test;
    if (static_cast<int>(pool.size()) < total)
        throw DataError("make_splits: pool of " + std::to_string(pool.size()) + " examples cannot fill " +
                        std::to_string(total));
    SplitSet out;
    out.seed = seed;
    auto it = pool.begin();
    out.labeled.assign(it, it + sizes.labeled);
    it += sizes.labeled;
    out.unlabeled.assign(it, it + sizes.unlabeled);
    it += sizes.unlabeled;
    out.test.assign(it, it + sizes.test);
    out.unlabeled = strip_labels(std::move(out.unlabeled));
    return out;
}

std::vector<Example> strip_labels(std::vector<Example> examples) {
    for (Example& ex : examples) ex.target.reset();
    return examples;
}

TaskSpec task_by_name(const std::string& name) {
    TaskSpec spec;
    spec.name = name;
    spec.generator = name;
    if (name == "token-majority") {
        spec.kind = TaskKind::kSingleBinary;
        spec.metric = "accuracy";
    } else if (name == "pattern-containment") {
        spec.kind = TaskKind::kSingleBinary;
        spec.metric = "matthews";
    } else if (name == "pair-overlap") {
        spec.kind = TaskKind::kPairBinary;
        spec.metric = "f1";
        spec.seq_len = 13;  // two halves of 6 plus the separator
    } else if (name == "three-way-count") {
        spec.kind = TaskKind::kMultiClass;
        spec.metric = "accuracy";
        spec.num_classes = 3;
    } else if (name == "overlap-score") {
        spec.kind = TaskKind::kRegression;
        spec.metric = "spearman";
        spec.seq_len = 13;
        spec.num_classes = 1;
    } else {
        throw DataError("unknown generator '" + name + "'");
    }
    return spec;
}

std::vector<std::string> builtin_task_names() {
    return {"token-majority", "pattern-containment", "pair-overlap", "three-way-count", "overlap-score"};
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, '\t')) cells.push_back(cell);
    return cells;
}

std::vector<int> tokenize(const std::string& text, int vocab) {
    std::vector<int> tokens;
    std::istringstream ss(text);
    std::string word;
    const int range = vocab - kFirstRegular;
    while (ss >> word)
        tokens.push_back(kFirstRegular + static_cast<int>(fnv1a64(word) % static_cast<std::uint64_t>(range)));
    return tokens;
}

}  // namespace

SplitSet load_tsv(const std::filesystem::path& path, const TaskSpec& schema) {
    std::ifstream is(path);
    if (!is) throw DataError("load_tsv: cannot open '" + path.string() + "'");
    const bool pair = schema.kind == TaskKind::kPairBinary;

    std::string line;
    if (!std::getline(is, line)) throw DataError("load_tsv: '" + path.string() + "' is empty");
    const auto header = split_tabs(line);
    const bool has_b = header.size() == 3 && header[1] == "text_b";
    if (!((header.size() == 2 && header[0] == "text_a" && header[1] == "target") ||
          (header.size() == 3 && header[0] == "text_a" && has_b && header[2] == "target")))
        throw DataError("load_tsv: line 1: header must be 'text_a\\t[text_b\\t]target'");
    if (pair && !has_b) throw DataError("load_tsv: line 1: pair task schema requires a text_b column");

    SplitSet out;
    int line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto cells = split_tabs(line);
        if (cells.size() != header.size())
            throw DataError("load_tsv: line " + std::to_string(line_no) + ": expected " +
                            std::to_string(header.size()) + " columns, got " + std::to_string(cells.size()));
        Example ex;
        ex.tokens_a = tokenize(cells[0], schema.vocab_size);
        if (ex.tokens_a.empty())
            throw DataError("load_tsv: line " + std::to_string(line_no) + ": empty text_a");
        if (has_b) {
            ex.tokens_b = tokenize(cells[1], schema.vocab_size);
            ex.is_pair = true;
            if (ex.tokens_b.empty())
                throw DataError("load_tsv: line " + std::to_string(line_no) + ": empty text_b");
        }
        const std::string& target_cell = cells.back();
        try {
            std::size_t used = 0;
            ex.target = std::stod(target_cell, &used);
            if (used != target_cell.size()) throw std::invalid_argument("trailing junk");
        } catch (const std::exception&) {
            throw DataError("load_tsv: line " + std::to_string(line_no) + ": bad target '" + target_cell + "'");
        }
        out.labeled.push_back(std::move(ex));
    }
    return out;
}

}  // namespace jachess::data
