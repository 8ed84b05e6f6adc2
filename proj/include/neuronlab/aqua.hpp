#pragma once
// Question augmentation: each multiple-choice example expands into three
// option-shuffled proxy questions. Option contents move across slots, the
// correct content is preserved, and the answer letter is remapped.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "neuronlab/common.hpp"
#include "neuronlab/tokenizer.hpp"

namespace neuronlab {

struct Demonstration {
    std::string stem;
    std::array<std::string, 4> options;
    int answer_index = 0;
};

struct QAExample {
    std::string id;
    std::string role;
    std::string rule;
    std::string stem;
    std::array<std::string, 4> options;
    int correct_index = 0;
    std::optional<Demonstration> demo;

    void validate() const;
};

// perms[p] maps proxy slot j -> parent slot perms[p][j].
struct ProxySet {
    std::string parent_id;
    std::array<std::array<int, 4>, 3> perms;
    std::array<QAExample, 3> proxies;
};

// Three distinct permutations drawn uniformly without replacement from the
// 24 arrangements of four slots.
ProxySet generate_proxies(const QAExample& parent, std::uint64_t seed);

// Prompt template. The preamble renders role, rule and the one-shot
// demonstration (lines whose placeholders all expand empty are dropped);
// the question block renders the stem, the four labeled options and the
// trailing answer cue.
struct PromptTemplate {
    std::string preamble;
    std::string question;

    static PromptTemplate parse(const std::string& text);
    static PromptTemplate load(const std::string& path);
    std::string text() const;
};

struct Prompt {
    std::string text;
    std::vector<int> tokens;
    int answer_pos = 0;  // final position, where the letter is predicted
};

// Renders and encodes. Throws UsageError for malformed examples (empty or
// duplicate options, punctuation inside option texts that would disturb the
// label structure) and StaleArtifactError when the prompt does not survive
// the tokenizer (unknown words).
Prompt compose_prompt(const QAExample& ex, const PromptTemplate& tmpl,
                      const Tokenizer& tok);

// jsonl round-trip, one object per line, schema_version 1.
void write_examples_jsonl(const std::string& path, const std::vector<QAExample>& v);
std::vector<QAExample> read_examples_jsonl(const std::string& path);
void write_proxies_jsonl(const std::string& path, const std::vector<ProxySet>& v);
std::vector<ProxySet> read_proxies_jsonl(const std::string& path);

}  // namespace neuronlab
