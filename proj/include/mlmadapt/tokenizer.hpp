#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mlmadapt/common.hpp"

namespace mlmadapt {

struct SpecialIds {
    uint32_t pad = 0;
    uint32_t unknown = 1;
    uint32_t mask = 2;
    std::optional<uint32_t> delimiter;

    bool is_special(uint32_t id) const {
        return id == pad || id == unknown || id == mask || (delimiter && id == *delimiter);
    }
    size_t count() const { return delimiter ? 4 : 3; }
};

// What downstream stages need to know about a tokenizer without holding one.
struct TokenizerInfo {
    uint32_t vocab_size = 0;
    SpecialIds specials;
    uint64_t spec_digest = 0;  // digest of the vocab source, for artifact lineage checks
};

class TokenizerAdapter {
public:
    virtual ~TokenizerAdapter() = default;

    virtual uint32_t vocab_size() const = 0;
    virtual const SpecialIds& specials() const = 0;
    virtual std::vector<uint32_t> encode(std::string_view text) const = 0;
    virtual std::string decode(std::span<const uint32_t> ids) const = 0;
    virtual uint64_t spec_digest() const = 0;

    TokenizerInfo info() const { return {vocab_size(), specials(), spec_digest()}; }

    // Enforces the adapter contract: special ids distinct and inside the vocab.
    void validate() const;
};

// Deterministic word-level tokenizer: ids 0..3 are [PAD] [UNK] [MASK] [SEP],
// then one id per vocab word in file order. Splits on ASCII whitespace.
class ToyTokenizer : public TokenizerAdapter {
public:
    explicit ToyTokenizer(const std::vector<std::string>& words, uint64_t digest = 0);

    static ToyTokenizer load(const std::filesystem::path& vocab_file);
    static void save_vocab(const std::vector<std::string>& words,
                           const std::filesystem::path& vocab_file);

    uint32_t vocab_size() const override { return static_cast<uint32_t>(4 + words_.size()); }
    const SpecialIds& specials() const override { return specials_; }
    std::vector<uint32_t> encode(std::string_view text) const override;
    std::string decode(std::span<const uint32_t> ids) const override;
    uint64_t spec_digest() const override { return digest_; }

    static constexpr uint32_t kPadId = 0;
    static constexpr uint32_t kUnknownId = 1;
    static constexpr uint32_t kMaskId = 2;
    static constexpr uint32_t kDelimiterId = 3;

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, uint32_t> index_;
    SpecialIds specials_;
    uint64_t digest_;
};

// Resolves a tokenizer spec string. Currently supported: "toy:<vocab-file>".
std::unique_ptr<TokenizerAdapter> resolve_tokenizer(const std::string& spec);

}  // namespace mlmadapt
