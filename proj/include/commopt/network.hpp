#pragma once

// The coordinator/blackboard communication models.  Machines and the
// coordinator live in one process; this layer is where every logical
// transfer is charged.  In the blackboard model reads (coordinator to
// machine) are free; machine-to-machine sends do not exist in either model.

#include <stdexcept>

#include "ledger.hpp"
#include "message.hpp"
#include "rng.hpp"

namespace commopt {

enum class Model { Coordinator, Blackboard };

struct Endpoint {
    int id; // -1 = coordinator, otherwise machine index
    static Endpoint coordinator() { return Endpoint{-1}; }
    static Endpoint machine(int i) { return Endpoint{i}; }
    bool is_coordinator() const { return id < 0; }
};

class Network {
public:
    Network(Model model, int num_machines, SharedRandomness shared)
        : model_(model), s_(num_machines), ledger_(num_machines),
          shared_(std::move(shared)) {}

    Model model() const { return model_; }
    int num_machines() const { return s_; }
    CommLedger& ledger() { return ledger_; }
    const CommLedger& ledger() const { return ledger_; }
    const SharedRandomness& shared() const { return shared_; }
    std::uint64_t round() const { return round_; }

    Rng stream(std::string_view tag, std::uint64_t machine = 0) const {
        return shared_.stream(tag, round_, machine);
    }

    // metered transfer between a machine and the coordinator (either order)
    void send(Endpoint from, Endpoint to, const Message& msg) {
        if (from.is_coordinator() == to.is_coordinator())
            throw std::invalid_argument(
                "only machine<->coordinator transfers exist in this model");
        if (from.is_coordinator())
            charge_down(to.id, msg);
        else
            charge_up(from.id, msg);
    }

    void send_to_coord(int machine, const Message& msg) {
        send(Endpoint::machine(machine), Endpoint::coordinator(), msg);
    }

    void send_to_machine(int machine, const Message& msg) {
        send(Endpoint::coordinator(), Endpoint::machine(machine), msg);
    }

    // coordinator model: s copies charged; blackboard: reads are free
    void broadcast(const Message& msg) {
        for (int i = 0; i < s_; ++i) charge_down(i, msg);
    }

    void round_barrier() {
        ledger_.bump_round();
        ++round_;
    }

private:
    void charge_up(int machine, const Message& msg) {
        check_machine(machine);
        ledger_.charge(msg.tag(), Direction::MachineToCoord, machine, round_,
                       msg.bit_size());
    }

    void charge_down(int machine, const Message& msg) {
        check_machine(machine);
        const std::uint64_t bits =
            model_ == Model::Blackboard ? 0 : msg.bit_size();
        ledger_.charge(msg.tag(), Direction::CoordToMachine, machine, round_, bits);
    }

    void check_machine(int machine) const {
        if (machine < 0 || machine >= s_)
            throw std::out_of_range("machine index out of range");
    }

    Model model_;
    int s_;
    CommLedger ledger_;
    SharedRandomness shared_;
    std::uint64_t round_ = 0;
};

} // namespace commopt
