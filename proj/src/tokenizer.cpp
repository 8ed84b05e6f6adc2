#include "neuronlab/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "neuronlab/common.hpp"

namespace neuronlab {

namespace {
const char* kSpecials[] = {"<bos>", "<unk>"};
bool is_punct_piece(char c) {
    static const std::string punct = ".,:;?!()";
    return punct.find(c) != std::string::npos;
}
}  // namespace

std::vector<std::string> Tokenizer::split(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    };
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            flush();
        } else if (is_punct_piece(c)) {
            flush();
            out.emplace_back(1, c);
        } else {
            cur.push_back(c);
        }
    }
    flush();
    return out;
}

Tokenizer Tokenizer::build(const std::vector<std::string>& corpus) {
    std::set<std::string> vocab;
    for (const auto& text : corpus) {
        for (auto& piece : split(text)) vocab.insert(piece);
    }
    vocab.insert("A");
    vocab.insert("B");
    vocab.insert("C");
    vocab.insert("D");

    Tokenizer t;
    for (const char* s : kSpecials) t.pieces_.emplace_back(s);
    for (const auto& piece : vocab) t.pieces_.push_back(piece);
    t.index();
    return t;
}

void Tokenizer::index() {
    lookup_.clear();
    for (int i = 0; i < static_cast<int>(pieces_.size()); ++i) lookup_[pieces_[i]] = i;
    const char* letters[4] = {"A", "B", "C", "D"};
    for (int s = 0; s < 4; ++s) {
        auto it = lookup_.find(letters[s]);
        letter_ids_[s] = it == lookup_.end() ? kUnkId : it->second;
    }
}

std::vector<int> Tokenizer::encode(const std::string& text, bool add_bos) const {
    std::vector<int> ids;
    if (add_bos) ids.push_back(kBosId);
    for (auto& piece : split(text)) ids.push_back(id_of(piece));
    return ids;
}

int Tokenizer::id_of(const std::string& piece) const {
    auto it = lookup_.find(piece);
    return it == lookup_.end() ? kUnkId : it->second;
}

const std::string& Tokenizer::piece_of(int id) const { return pieces_.at(id); }

void Tokenizer::save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw MissingArtifactError("cannot write vocab file: " + path);
    for (const auto& piece : pieces_) f << piece << "\n";
}

Tokenizer Tokenizer::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw MissingArtifactError("cannot read vocab file: " + path);
    Tokenizer t;
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty()) t.pieces_.push_back(line);
    }
    if (t.pieces_.size() < 2 || t.pieces_[0] != kSpecials[0] || t.pieces_[1] != kSpecials[1])
        throw StaleArtifactError("vocab file lacks the special-token preamble: " + path);
    t.index();
    return t;
}

std::uint64_t Tokenizer::content_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& piece : pieces_) {
        h = fnv1a64(piece.data(), piece.size(), h);
        h = fnv1a64("\n", 1, h);
    }
    return h;
}

std::string hash_hex(std::uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[i] = digits[h & 0xf];
        h >>= 4;
    }
    return s;
}

void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
    if (workers <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    int nw = std::min(workers, n);
    std::vector<std::thread> pool;
    pool.reserve(nw);
    for (int w = 0; w < nw; ++w) {
        pool.emplace_back([&, w] {
            for (int i = w; i < n; i += nw) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace neuronlab
