#pragma once

// Exact per-direction, per-machine, per-round bit accounting.

#include <cstdint>
#include <string>
#include <vector>
#include <numeric>

#include "../../vendor/json.hpp"

namespace commopt {

enum class Direction { MachineToCoord, CoordToMachine };

struct LedgerEntry {
    std::string tag;
    Direction dir;
    int machine;
    std::uint64_t round;
    std::uint64_t bits;
};

class CommLedger {
public:
    explicit CommLedger(int num_machines)
        : bits_up_(num_machines, 0), bits_down_(num_machines, 0) {}

    void charge(const std::string& tag, Direction dir, int machine,
                std::uint64_t round, std::uint64_t bits) {
        if (dir == Direction::MachineToCoord)
            bits_up_[machine] += bits;
        else
            bits_down_[machine] += bits;
        per_step_.push_back(LedgerEntry{tag, dir, machine, round, bits});
    }

    void bump_round() { ++rounds_; }

    std::uint64_t rounds() const { return rounds_; }
    const std::vector<std::uint64_t>& bits_machine_to_coord() const { return bits_up_; }
    const std::vector<std::uint64_t>& bits_coord_to_machine() const { return bits_down_; }
    const std::vector<LedgerEntry>& per_step() const { return per_step_; }

    std::uint64_t total_up() const {
        return std::accumulate(bits_up_.begin(), bits_up_.end(), std::uint64_t(0));
    }
    std::uint64_t total_down() const {
        return std::accumulate(bits_down_.begin(), bits_down_.end(), std::uint64_t(0));
    }
    std::uint64_t total() const { return total_up() + total_down(); }

    // additivity invariant: counters are exactly the per-step sums
    bool consistent() const {
        std::uint64_t up = 0, down = 0;
        for (const auto& e : per_step_)
            (e.dir == Direction::MachineToCoord ? up : down) += e.bits;
        return up == total_up() && down == total_down();
    }

    nlohmann::json to_json(const std::string& protocol) const {
        nlohmann::json steps = nlohmann::json::array();
        for (const auto& e : per_step_)
            steps.push_back({{"tag", e.tag},
                             {"dir", e.dir == Direction::MachineToCoord ? "up" : "down"},
                             {"machine", e.machine},
                             {"round", e.round},
                             {"bits", e.bits}});
        return nlohmann::json{{"protocol", protocol},
                              {"bits_up", bits_up_},
                              {"bits_down", bits_down_},
                              {"bits_total", total()},
                              {"rounds", rounds_},
                              {"per_step", steps}};
    }

private:
    std::vector<std::uint64_t> bits_up_, bits_down_;
    std::uint64_t rounds_ = 0;
    std::vector<LedgerEntry> per_step_;
};

} // namespace commopt
