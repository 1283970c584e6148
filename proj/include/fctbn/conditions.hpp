#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fctbn {

using StateMask = std::uint32_t;

/// Ordered set of binary chronic conditions. Bit j of every MccState refers to conditions()[j].
class ConditionSet {
public:
    static constexpr std::size_t kMaxConditions = 31;

    ConditionSet();  // DI, OB, HP, HL, CI
    explicit ConditionSet(std::vector<std::string> ids);

    std::size_t size() const { return ids_.size(); }
    const std::string& name(std::size_t j) const { return ids_.at(j); }
    const std::vector<std::string>& names() const { return ids_; }

    /// Throws DomainError for unknown identifiers.
    std::size_t index_of(const std::string& id) const;
    bool contains(const std::string& id) const;

    StateMask full_mask() const { return size() == 32 ? ~StateMask{0} : ((StateMask{1} << size()) - 1); }

    bool operator==(const ConditionSet&) const = default;

private:
    std::vector<std::string> ids_;
};

/// Joint acquisition state: bit j set means condition j has been diagnosed.
class MccState {
public:
    constexpr MccState() = default;
    constexpr explicit MccState(StateMask bits) : bits_(bits) {}

    constexpr StateMask bits() const { return bits_; }
    constexpr bool has(std::size_t j) const { return (bits_ >> j) & 1u; }
    constexpr MccState with(std::size_t j) const { return MccState(bits_ | (StateMask{1} << j)); }
    constexpr bool is_subset_of(MccState other) const { return (bits_ & ~other.bits_) == 0; }
    int count() const { return __builtin_popcount(bits_); }

    constexpr bool operator==(const MccState&) const = default;
    constexpr auto operator<=>(const MccState&) const = default;

    static MccState from_names(const ConditionSet& set, const std::vector<std::string>& names);
    std::vector<std::string> names(const ConditionSet& set) const;

private:
    StateMask bits_ = 0;
};

}  // namespace fctbn
