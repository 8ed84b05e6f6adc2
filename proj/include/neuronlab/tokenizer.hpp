#pragma once
// Whitespace-and-punctuation tokenizer with a corpus-derived vocabulary.
// Vocabulary ids are stable: specials first, then the sorted set of corpus
// tokens, so identical corpora always produce identical id assignments.

#include <array>
#include <string>
#include <unordered_map>
#include <vector>

namespace neuronlab {

class Tokenizer {
  public:
    static constexpr int kBosId = 0;
    static constexpr int kUnkId = 1;

    Tokenizer() = default;

    // Builds the vocabulary from raw corpus text. The option letters are
    // force-added so they are always present as single tokens.
    static Tokenizer build(const std::vector<std::string>& corpus);

    // Splits text into word / single-punctuation pieces. Whitespace
    // (including newlines) only separates.
    static std::vector<std::string> split(const std::string& text);

    // Encodes text; unknown pieces map to <unk>. A leading <bos> is added
    // when add_bos is set.
    std::vector<int> encode(const std::string& text, bool add_bos = true) const;

    int id_of(const std::string& piece) const;  // kUnkId when absent
    const std::string& piece_of(int id) const;
    int vocab_size() const { return static_cast<int>(pieces_.size()); }

    // Ids of "A" "B" "C" "D" in slot order.
    const std::array<int, 4>& letter_ids() const { return letter_ids_; }

    void save(const std::string& path) const;
    static Tokenizer load(const std::string& path);

    std::uint64_t content_hash() const;

  private:
    void index();

    std::vector<std::string> pieces_;
    std::unordered_map<std::string, int> lookup_;
    std::array<int, 4> letter_ids_{kUnkId, kUnkId, kUnkId, kUnkId};
};

}  // namespace neuronlab
