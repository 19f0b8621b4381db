#include "qcm/protocol.hpp"

#include <cassert>
#include <cmath>
#include <stdexcept>

namespace qcm {

void validate(const ProtocolParams& p) {
    if (p.N < 1) throw std::invalid_argument("N must be >= 1");
    if (p.k < 0) throw std::invalid_argument("k must be >= 0");
    if (!(p.P_a > 0 && p.P_a < 1)) throw std::invalid_argument("P_a must lie in (0,1)");
    if (!(p.P_c > 0 && p.P_c < 1)) throw std::invalid_argument("P_c must lie in (0,1)");
    if (p.nu < 1) throw std::invalid_argument("nu must be >= 1");
    if (p.abort_threshold < 1) throw std::invalid_argument("abort_threshold must be >= 1");
    if (p.quadrature_fraction < 0 || p.quadrature_fraction > 1) {
        throw std::invalid_argument("quadrature_fraction must lie in [0,1]");
    }
    if (p.quadrature_fraction > 0 && p.k != 0) {
        throw std::invalid_argument("quadrature readout is defined for the single-party scheme only");
    }
    if (p.extended_decoys && p.k != 0) {
        throw std::invalid_argument("extended decoys are defined for the single-party scheme only");
    }
    if (p.preshared_basis_key && p.k != 1) {
        throw std::invalid_argument("preshared_basis_key applies to the two-party scheme only");
    }
    if (p.balanced_decoys && std::abs(p.P_a * (2 - p.P_c) - 1) > 1e-9) {
        throw std::invalid_argument("balanced decoys require P_a(2 - P_c) = 1");
    }
    const int probes = p.k >= 2 ? p.N + p.k - 1 : p.N;
    if (probes > state_cap()) {
        throw std::invalid_argument("probe count exceeds the state cap");
    }
    if (p.k >= 2 && p.key_length < 8) {
        throw std::invalid_argument("key_length must be >= 8 for the k-party scheme");
    }
}

double eta_for(double P_a, double P_c) { return (1 - P_a) / (1 - P_a * P_c); }

namespace {

std::string ghz_outcome_name(GhzOutcome o) {
    switch (o) {
        case GhzOutcome::Plus: return "plus";
        case GhzOutcome::Minus: return "minus";
        default: return "invalid";
    }
}

std::string bits_string(std::uint64_t bits, int n) {
    std::string s(static_cast<std::size_t>(n), '0');
    for (int i = 0; i < n; ++i) {
        if ((bits >> i) & 1) s[i] = '1';
    }
    return s;
}

PrepKind draw_preparation(Rng& alice, const ProtocolParams& p) {
    if (alice.uniform() < p.P_a) {
        return alice.bernoulli(0.5) ? PrepKind::NoonPlus : PrepKind::NoonMinus;
    }
    if (!p.extended_decoys) {
        return alice.uniform_int(0, 1) == 0 ? PrepKind::Energy0 : PrepKind::Energy1;
    }
    switch (alice.uniform_int(0, 3)) {
        case 0: return PrepKind::Energy0;
        case 1: return PrepKind::Energy1;
        case 2: return PrepKind::NoonPlusI;
        default: return PrepKind::NoonMinusI;
    }
}

JointState make_preparation(PrepKind kind, int n) {
    switch (kind) {
        case PrepKind::NoonPlus: return prepare_noon(n, +1);
        case PrepKind::NoonMinus: return prepare_noon(n, -1);
        case PrepKind::NoonPlusI: return prepare_noon_imag(n, +1);
        case PrepKind::NoonMinusI: return prepare_noon_imag(n, -1);
        case PrepKind::Energy0: return prepare_energy(n, 0);
        default: return prepare_energy(n, 1);
    }
}

// One probe on the wire at a time; the hook returns the injected extras for
// the receiving station's count.
class TransitWire {
public:
    TransitWire(AdversaryStrategy& eve, Rng& eve_rng) : eve_(eve), rng_(eve_rng) {}

    int fire(TransitContext&& ctx, RoundRecord& rec) {
        assert(!in_transit_ && "probe serialization violated");
        in_transit_ = true;
        std::vector<TamperRecord> events = eve_.on_probe_transit(ctx, rng_);
        for (TamperRecord& e : events) rec.adversary_events.push_back(std::move(e));
        in_transit_ = false;
        return ctx.inject;
    }

private:
    AdversaryStrategy& eve_;
    Rng& rng_;
    bool in_transit_ = false;
};

double charlie_angle(const ProtocolParams& p, const CharlieAction& a) {
    const double base = a.m * M_PI / p.N;
    return a.applied_phase ? p.phi_true + base : base;
}

struct Broadcaster {
    AdversaryStrategy& eve;
    void to(std::vector<Message>& log, Message msg) {
        eve.on_classical_message(msg);
        log.push_back(std::move(msg));
    }
};

void record_abort(Transcript& t, int round, std::vector<Message>& log,
                  Broadcaster& cast, const std::string& reason) {
    t.aborted = true;
    t.abort_round = round;
    cast.to(log, Message{0, "verifier", "abort", {{"round", round}, {"reason", reason}}});
}

}  // namespace

DecoyCheck verify_decoy(const RoundRecord& rec, const RevealContext& ctx) {
    if (rec.bases.size() != rec.outcomes.size()) {
        throw std::invalid_argument("verify_decoy: bases/outcomes size mismatch");
    }
    if (prep_is_energy(ctx.prep)) {
        // Phases act diagonally, so the prepared bit must come back verbatim
        // from every energy-basis readout.
        const char want = prep_bit(ctx.prep) ? '1' : '0';
        bool any = false;
        for (std::size_t i = 0; i < rec.bases.size(); ++i) {
            if (rec.bases[i] != "energy") continue;
            any = true;
            for (char c : rec.outcomes[i]) {
                if (c != want) return DecoyCheck::Fail;
            }
        }
        return any ? DecoyCheck::Pass : DecoyCheck::NotADecoy;
    }
    if (!ctx.charlie_check) return DecoyCheck::NotADecoy;
    if (ctx.quadrature_measured) return DecoyCheck::NotADecoy;
    const int expected = prep_sign(ctx.prep) * (ctx.m % 2 == 0 ? +1 : -1);
    const std::string family = prep_is_imag_noon(ctx.prep) ? "ghz_imag" : "ghz_real";
    for (std::size_t i = 0; i < rec.bases.size(); ++i) {
        if (rec.bases[i] != family) continue;
        if (rec.outcomes[i] == "invalid") return DecoyCheck::Fail;
        const int got = rec.outcomes[i] == "plus" ? +1 : -1;
        return got == expected ? DecoyCheck::Pass : DecoyCheck::Fail;
    }
    // Product-share readout: the parity lives in the product of all +-1
    // single-probe outcomes.
    int prod = 1;
    bool any_x = false;
    for (std::size_t i = 0; i < rec.bases.size(); ++i) {
        if (rec.bases[i] != "x" && rec.bases[i] != "x_product") continue;
        any_x = true;
        prod *= rec.outcomes[i] == "plus" ? +1 : -1;
    }
    if (any_x) return prod == expected ? DecoyCheck::Pass : DecoyCheck::Fail;
    return DecoyCheck::NotADecoy;
}

Transcript run_single_party(const ProtocolParams& params, AdversaryStrategy& eve) {
    validate(params);
    if (params.k != 0) throw std::invalid_argument("run_single_party requires k == 0");
    const int N = params.N;
    const Spectrum& sp = params.spectrum;
    Rng alice(params.seed, stream::kAlice);
    Rng charlie(params.seed, stream::kCharlie);
    Rng eve_rng(params.seed, stream::kEve);
    eve.begin_run(params.extended_decoys ? 3 : 2);
    TransitWire wire(eve, eve_rng);
    Broadcaster cast{eve};

    Transcript t;
    t.params = params;
    int failures = 0;

    for (int r = 0; r < params.nu && !t.aborted; ++r) {
        RoundRecord rec;
        rec.index = r;
        rec.prep = draw_preparation(alice, params);
        rec.charlie.applied_phase = charlie.bernoulli(params.P_c);
        rec.charlie.m = charlie.uniform_int(0, N - 1);
        JointState st = make_preparation(rec.prep, N);

        int charlie_station = 0, alice_station = 0;
        for (int probe = 0; probe < N; ++probe) {
            charlie_station += 1 + wire.fire(
                TransitContext{Leg::ToCharlie, r, probe, N, N, false, &st, &sp, 0}, rec);
            apply_phase(st, charlie_angle(params, rec.charlie), sp, {probe});
            alice_station += 1 + wire.fire(
                TransitContext{Leg::FromCharlie, r, probe, N, N, probe == N - 1, &st, &sp, 0},
                rec);
        }
        if (charlie_station > N || alice_station > N) {
            t.probe_count_violation = true;
            t.aborted = true;
            t.abort_round = r;
            cast.to(rec.messages,
                    Message{0, "charlie", "probe_count_violation",
                            {{"round", r}, {"count", std::max(charlie_station, alice_station)}, {"expected", N}}});
            t.rounds.push_back(std::move(rec));
            break;
        }

        rec.sift_kept = true;  // the preparer always measures her own class
        if (prep_is_energy(rec.prep)) {
            const std::uint64_t bits = measure_energy_all(st, alice);
            rec.bases = {"energy"};
            rec.outcomes = {bits_string(bits, N)};
            rec.decoy_check = verify_decoy(rec, RevealContext{rec.prep, false, 0, false});
            if (rec.decoy_check == DecoyCheck::Fail && ++failures >= params.abort_threshold) {
                t.aborted = true;
                t.abort_round = r;
                cast.to(rec.messages, Message{0, "alice", "abort",
                                              {{"round", r}, {"reason", "energy decoy mismatch"}}});
            }
        } else {
            bool quad = false;
            if (prep_is_real_noon(rec.prep) && params.quadrature_fraction > 0) {
                quad = alice.bernoulli(params.quadrature_fraction);
            }
            const bool imag_family = quad || prep_is_imag_noon(rec.prep);
            const GhzMeasurement m = measure_ghz(st, alice, imag_family);
            rec.quadrature_measured = quad;
            rec.bases = {imag_family ? "ghz_imag" : "ghz_real"};
            rec.outcomes = {ghz_outcome_name(m.outcome)};
        }
        t.rounds.push_back(std::move(rec));
    }

    if (t.aborted) return t;

    // Charlie discloses check rounds with their m; the preparer verifies the
    // parity flip rule round by round.
    nlohmann::json check_rounds = nlohmann::json::array();
    nlohmann::json check_ms = nlohmann::json::array();
    for (const RoundRecord& rec : t.rounds) {
        if (!rec.charlie.applied_phase) {
            check_rounds.push_back(rec.index);
            check_ms.push_back(rec.charlie.m);
        }
    }
    cast.to(t.reveal_log, Message{1, "charlie", "check_disclosure",
                                  {{"rounds", check_rounds}, {"m", check_ms}}});
    for (RoundRecord& rec : t.rounds) {
        if (!prep_is_noon(rec.prep) || rec.charlie.applied_phase) continue;
        rec.decoy_check = verify_decoy(
            rec, RevealContext{rec.prep, true, rec.charlie.m, rec.quadrature_measured});
        if (rec.decoy_check == DecoyCheck::Fail && ++failures >= params.abort_threshold) {
            record_abort(t, rec.index, t.reveal_log, cast, "check-unitary parity mismatch");
            break;
        }
    }
    if (t.aborted) return t;

    // Phase-round m values are disclosed only once every check has passed.
    nlohmann::json phase_rounds = nlohmann::json::array();
    nlohmann::json phase_ms = nlohmann::json::array();
    for (const RoundRecord& rec : t.rounds) {
        if (rec.charlie.applied_phase) {
            phase_rounds.push_back(rec.index);
            phase_ms.push_back(rec.charlie.m);
        }
    }
    cast.to(t.reveal_log, Message{2, "charlie", "phase_m_disclosure",
                                  {{"rounds", phase_rounds}, {"m", phase_ms}}});
    for (RoundRecord& rec : t.rounds) {
        if (prep_is_noon(rec.prep) && rec.charlie.applied_phase) {
            rec.usable_for_estimation = true;
            t.retained_for_estimation.push_back(rec.index);
        }
    }
    return t;
}

Transcript run_two_party(const ProtocolParams& params, AdversaryStrategy& eve) {
    validate(params);
    if (params.k != 1) throw std::invalid_argument("run_two_party requires k == 1");
    const int N = params.N;
    const Spectrum& sp = params.spectrum;
    const double eta = eta_for(params.P_a, params.P_c);
    Rng alice(params.seed, stream::kAlice);
    Rng charlie(params.seed, stream::kCharlie);
    Rng bob(params.seed, stream::kBob);
    Rng eve_rng(params.seed, stream::kEve);
    Rng shared_key(params.seed, stream::kSharedKey);
    eve.begin_run(2);
    TransitWire wire(eve, eve_rng);
    Broadcaster cast{eve};

    Transcript t;
    t.params = params;
    int failures = 0;

    for (int r = 0; r < params.nu && !t.aborted; ++r) {
        RoundRecord rec;
        rec.index = r;
        bool bob_ghz;
        if (params.preshared_basis_key) {
            // The shared secret fixes the preparation class, so Bob always
            // measures in the matching family.
            const bool noon_class = shared_key.bernoulli(params.P_a);
            if (noon_class) {
                rec.prep = alice.bernoulli(0.5) ? PrepKind::NoonPlus : PrepKind::NoonMinus;
            } else {
                rec.prep = alice.uniform_int(0, 1) == 0 ? PrepKind::Energy0 : PrepKind::Energy1;
            }
            bob_ghz = noon_class;
        } else {
            rec.prep = draw_preparation(alice, params);
            bob_ghz = bob.bernoulli(eta);
        }
        rec.charlie.applied_phase = charlie.bernoulli(params.P_c);
        rec.charlie.m = charlie.uniform_int(0, N - 1);
        JointState st = make_preparation(rec.prep, N);

        int charlie_station = 0, bob_station = 0;
        for (int probe = 0; probe < N; ++probe) {
            charlie_station += 1 + wire.fire(
                TransitContext{Leg::ToCharlie, r, probe, N, N, false, &st, &sp, 0}, rec);
            apply_phase(st, charlie_angle(params, rec.charlie), sp, {probe});
            bob_station += 1 + wire.fire(
                TransitContext{Leg::FromCharlie, r, probe, N, N, probe == N - 1, &st, &sp, 0},
                rec);
        }
        if (charlie_station > N || bob_station > N) {
            t.probe_count_violation = true;
            t.aborted = true;
            t.abort_round = r;
            cast.to(rec.messages,
                    Message{0, "charlie", "probe_count_violation",
                            {{"round", r}, {"count", std::max(charlie_station, bob_station)}, {"expected", N}}});
            t.rounds.push_back(std::move(rec));
            break;
        }

        if (bob_ghz) {
            const GhzMeasurement m = measure_ghz(st, bob, false);
            rec.bases = {"ghz_real"};
            rec.outcomes = {ghz_outcome_name(m.outcome)};
        } else {
            const std::uint64_t bits = measure_energy_all(st, bob);
            rec.bases = {"energy"};
            rec.outcomes = {bits_string(bits, N)};
        }
        rec.sift_kept = (prep_is_noon(rec.prep) && bob_ghz) ||
                        (prep_is_energy(rec.prep) && !bob_ghz);
        t.rounds.push_back(std::move(rec));
    }

    if (t.aborted) return t;

    // Step 1: Alice reveals preparation classes and decoy bits; energy-decoy
    // correlations are checked on the sifted rounds.
    {
        nlohmann::json classes = nlohmann::json::array();
        nlohmann::json bits = nlohmann::json::array();
        for (const RoundRecord& rec : t.rounds) {
            classes.push_back(prep_is_noon(rec.prep) ? "noon" : "energy");
            bits.push_back(prep_is_energy(rec.prep) ? nlohmann::json(prep_bit(rec.prep))
                                                    : nlohmann::json());
        }
        cast.to(t.reveal_log, Message{1, "alice", "preparation_bases",
                                      {{"classes", classes}, {"energy_bits", bits}}});
    }
    for (RoundRecord& rec : t.rounds) {
        if (!rec.sift_kept || !prep_is_energy(rec.prep)) continue;
        rec.decoy_check = verify_decoy(rec, RevealContext{rec.prep, false, 0, false});
        if (rec.decoy_check == DecoyCheck::Fail && ++failures >= params.abort_threshold) {
            record_abort(t, rec.index, t.reveal_log, cast, "energy decoy mismatch");
            break;
        }
    }
    if (t.aborted) return t;

    // Step 2: Charlie reveals which rounds were checks.
    nlohmann::json check_rounds = nlohmann::json::array();
    nlohmann::json check_ms = nlohmann::json::array();
    for (const RoundRecord& rec : t.rounds) {
        if (!rec.charlie.applied_phase) {
            check_rounds.push_back(rec.index);
            check_ms.push_back(rec.charlie.m);
        }
    }
    cast.to(t.reveal_log, Message{2, "charlie", "check_disclosure", {{"rounds", check_rounds}}});

    // Step 3: check-round m and signs are revealed, the flip rule verified,
    // then phase-round m disclosed only if everything passed.
    cast.to(t.reveal_log, Message{3, "charlie", "check_m_disclosure",
                                  {{"rounds", check_rounds}, {"m", check_ms}}});
    {
        nlohmann::json sign_rounds = nlohmann::json::array();
        nlohmann::json signs = nlohmann::json::array();
        for (const RoundRecord& rec : t.rounds) {
            if (rec.sift_kept && prep_is_noon(rec.prep) && !rec.charlie.applied_phase) {
                sign_rounds.push_back(rec.index);
                signs.push_back(prep_sign(rec.prep));
            }
        }
        cast.to(t.reveal_log, Message{3, "alice", "check_signs",
                                      {{"rounds", sign_rounds}, {"signs", signs}}});
    }
    for (RoundRecord& rec : t.rounds) {
        if (!rec.sift_kept || !prep_is_noon(rec.prep) || rec.charlie.applied_phase) continue;
        rec.decoy_check =
            verify_decoy(rec, RevealContext{rec.prep, true, rec.charlie.m, false});
        if (rec.decoy_check == DecoyCheck::Fail && ++failures >= params.abort_threshold) {
            record_abort(t, rec.index, t.reveal_log, cast, "check-unitary parity mismatch");
            break;
        }
    }
    if (t.aborted) return t;
    {
        nlohmann::json phase_rounds = nlohmann::json::array();
        nlohmann::json phase_ms = nlohmann::json::array();
        for (const RoundRecord& rec : t.rounds) {
            if (rec.charlie.applied_phase) {
                phase_rounds.push_back(rec.index);
                phase_ms.push_back(rec.charlie.m);
            }
        }
        cast.to(t.reveal_log, Message{3, "charlie", "phase_m_disclosure",
                                      {{"rounds", phase_rounds}, {"m", phase_ms}}});
    }

    // Step 4: Alice reveals the sign on even-position retained rounds (Bob's
    // estimation half); Bob reveals his outcome on the odd ones.
    for (RoundRecord& rec : t.rounds) {
        if (rec.sift_kept && prep_is_noon(rec.prep) && rec.charlie.applied_phase) {
            t.retained_for_estimation.push_back(rec.index);
        }
    }
    nlohmann::json sign_rounds = nlohmann::json::array();
    nlohmann::json signs = nlohmann::json::array();
    nlohmann::json outcome_rounds = nlohmann::json::array();
    nlohmann::json outcomes = nlohmann::json::array();
    for (std::size_t pos = 0; pos < t.retained_for_estimation.size(); ++pos) {
        RoundRecord& rec = t.rounds[static_cast<std::size_t>(t.retained_for_estimation[pos])];
        if (pos % 2 == 0) {
            rec.usable_for_estimation = true;
            sign_rounds.push_back(rec.index);
            signs.push_back(prep_sign(rec.prep));
        } else {
            outcome_rounds.push_back(rec.index);
            outcomes.push_back(rec.outcomes[0]);
        }
    }
    cast.to(t.reveal_log, Message{4, "alice", "sign_reveal",
                                  {{"rounds", sign_rounds}, {"signs", signs}}});
    cast.to(t.reveal_log, Message{4, "bob", "outcome_reveal",
                                  {{"rounds", outcome_rounds}, {"outcomes", outcomes}}});
    return t;
}

namespace {

std::uint64_t key_to_seed(const std::vector<std::uint8_t>& bits) {
    std::uint64_t h = 0x7C3A9D5B2E8F6A01ULL;
    for (std::size_t i = 0; i < bits.size(); ++i) {
        h = mix64(h ^ (static_cast<std::uint64_t>(bits[i]) + 2 * i + 1));
    }
    return h;
}

}  // namespace

Transcript run_multi_party(const ProtocolParams& params, AdversaryStrategy& eve) {
    validate(params);
    if (params.k < 2) throw std::invalid_argument("run_multi_party requires k >= 2");
    const int N = params.N;
    const int n = params.N + params.k - 1;
    const Spectrum& sp = params.spectrum;

    Transcript t;
    t.params = params;
    Broadcaster cast{eve};

    // Pairwise key agreement, then alignment to the first recipient's string.
    std::vector<PartyKey> raw;
    raw.reserve(static_cast<std::size_t>(params.k));
    for (int j = 1; j <= params.k; ++j) {
        Rng kr(derive_seed(params.seed, 1000 + static_cast<std::uint64_t>(j)), stream::kBb84);
        PartyKey pk = bb84_keygen(params.key_length, kr, nullptr);
        if (pk.aborted) {
            t.aborted = true;
            t.abort_round = -1;
            cast.to(t.reveal_log, Message{0, "alice", "abort",
                                          {{"reason", "key agreement failed"}, {"party", j}}});
            return t;
        }
        raw.push_back(std::move(pk));
    }
    const std::vector<PartyKey> aligned = align_keys(raw);
    for (int j = 1; j < params.k; ++j) {
        cast.to(t.reveal_log,
                Message{0, "alice", "key_flip_list",
                        {{"party", j + 1}, {"flips", aligned[static_cast<std::size_t>(j)].flips_applied}}});
    }

    // Both ends expand the aligned key into the per-round schedule, so no
    // further basis communication is needed.
    Rng sched(key_to_seed(aligned[0].bits), stream::kSharedKey);
    Rng alice(params.seed, stream::kAlice);
    Rng charlie(params.seed, stream::kCharlie);
    Rng bob(params.seed, stream::kBob);
    Rng eve_rng(params.seed, stream::kEve);
    std::vector<Rng> party_rng;
    for (int j = 2; j <= params.k; ++j) {
        party_rng.emplace_back(params.seed, stream::kPartyBase + static_cast<std::uint64_t>(j));
    }
    eve.begin_run(2);
    TransitWire wire(eve, eve_rng);
    int failures = 0;

    for (int r = 0; r < params.nu && !t.aborted; ++r) {
        RoundRecord rec;
        rec.index = r;
        const bool noon_class = sched.bernoulli(params.P_a);
        if (noon_class) {
            rec.prep = alice.bernoulli(0.5) ? PrepKind::NoonPlus : PrepKind::NoonMinus;
        } else {
            rec.prep = alice.uniform_int(0, 1) == 0 ? PrepKind::Energy0 : PrepKind::Energy1;
        }
        rec.charlie.applied_phase = charlie.bernoulli(params.P_c);
        rec.charlie.m = charlie.uniform_int(0, N - 1);
        JointState st = make_preparation(rec.prep, n);

        int charlie_station = 0, bob_station = 0;
        std::vector<int> party_station(static_cast<std::size_t>(params.k - 1), 0);
        for (int probe = 0; probe < N; ++probe) {
            charlie_station += 1 + wire.fire(
                TransitContext{Leg::ToCharlie, r, probe, n, N, false, &st, &sp, 0}, rec);
            apply_phase(st, charlie_angle(params, rec.charlie), sp, {probe});
            bob_station += 1 + wire.fire(
                TransitContext{Leg::FromCharlie, r, probe, n, N, false, &st, &sp, 0}, rec);
        }
        for (int probe = N; probe < n; ++probe) {
            // Direct single-probe sends to the other recipients; no return leg.
            party_station[static_cast<std::size_t>(probe - N)] += 1 + wire.fire(
                TransitContext{Leg::ToCharlie, r, probe, n, N, probe == n - 1, &st, &sp, 0},
                rec);
        }
        bool violation = charlie_station > N || bob_station > N;
        for (int c : party_station) violation = violation || c > 1;
        if (violation) {
            t.probe_count_violation = true;
            t.aborted = true;
            t.abort_round = r;
            cast.to(rec.messages, Message{0, "charlie", "probe_count_violation",
                                          {{"round", r}, {"expected", N}}});
            t.rounds.push_back(std::move(rec));
            break;
        }

        rec.sift_kept = true;  // bases are fixed by the shared key
        if (noon_class) {
            int bob_product = 1;
            for (int probe = 0; probe < N; ++probe) {
                const int o = measure_single_probe(st, probe, Basis::GhzPlusMinus, bob);
                bob_product *= o == 0 ? +1 : -1;
            }
            rec.bases = {"x_product"};
            rec.outcomes = {bob_product > 0 ? "plus" : "minus"};
            for (int j = 0; j < params.k - 1; ++j) {
                const int o = measure_single_probe(st, N + j, Basis::GhzPlusMinus,
                                                   party_rng[static_cast<std::size_t>(j)]);
                rec.bases.push_back("x");
                rec.outcomes.push_back(o == 0 ? "plus" : "minus");
            }
        } else {
            std::uint64_t bob_bits = 0;
            for (int probe = 0; probe < N; ++probe) {
                const int o = measure_single_probe(st, probe, Basis::Energy, bob);
                bob_bits |= static_cast<std::uint64_t>(o) << probe;
            }
            rec.bases = {"energy"};
            rec.outcomes = {bits_string(bob_bits, N)};
            for (int j = 0; j < params.k - 1; ++j) {
                const int o = measure_single_probe(st, N + j, Basis::Energy,
                                                   party_rng[static_cast<std::size_t>(j)]);
                rec.bases.push_back("energy");
                rec.outcomes.push_back(o == 0 ? "0" : "1");
            }
        }
        t.rounds.push_back(std::move(rec));
    }

    if (t.aborted) return t;

    // Step 1: decoy bits for the energy rounds.
    {
        nlohmann::json rounds = nlohmann::json::array();
        nlohmann::json bits = nlohmann::json::array();
        for (const RoundRecord& rec : t.rounds) {
            if (prep_is_energy(rec.prep)) {
                rounds.push_back(rec.index);
                bits.push_back(prep_bit(rec.prep));
            }
        }
        cast.to(t.reveal_log, Message{1, "alice", "energy_bits",
                                      {{"rounds", rounds}, {"bits", bits}}});
    }
    for (RoundRecord& rec : t.rounds) {
        if (!prep_is_energy(rec.prep)) continue;
        rec.decoy_check = verify_decoy(rec, RevealContext{rec.prep, false, 0, false});
        if (rec.decoy_check == DecoyCheck::Fail && ++failures >= params.abort_threshold) {
            record_abort(t, rec.index, t.reveal_log, cast, "energy decoy mismatch");
            break;
        }
    }
    if (t.aborted) return t;

    // Steps 2-3: check rounds, their m and signs, pooled parity verification.
    nlohmann::json check_rounds = nlohmann::json::array();
    nlohmann::json check_ms = nlohmann::json::array();
    for (const RoundRecord& rec : t.rounds) {
        if (!rec.charlie.applied_phase) {
            check_rounds.push_back(rec.index);
            check_ms.push_back(rec.charlie.m);
        }
    }
    cast.to(t.reveal_log, Message{2, "charlie", "check_disclosure", {{"rounds", check_rounds}}});
    cast.to(t.reveal_log, Message{3, "charlie", "check_m_disclosure",
                                  {{"rounds", check_rounds}, {"m", check_ms}}});
    {
        nlohmann::json rounds = nlohmann::json::array();
        nlohmann::json signs = nlohmann::json::array();
        for (const RoundRecord& rec : t.rounds) {
            if (prep_is_noon(rec.prep) && !rec.charlie.applied_phase) {
                rounds.push_back(rec.index);
                signs.push_back(prep_sign(rec.prep));
            }
        }
        cast.to(t.reveal_log, Message{3, "alice", "check_signs",
                                      {{"rounds", rounds}, {"signs", signs}}});
    }
    for (RoundRecord& rec : t.rounds) {
        if (!prep_is_noon(rec.prep) || rec.charlie.applied_phase) continue;
        rec.decoy_check =
            verify_decoy(rec, RevealContext{rec.prep, true, rec.charlie.m, false});
        if (rec.decoy_check == DecoyCheck::Fail && ++failures >= params.abort_threshold) {
            record_abort(t, rec.index, t.reveal_log, cast, "shared-parity mismatch");
            break;
        }
    }
    if (t.aborted) return t;
    {
        nlohmann::json phase_rounds = nlohmann::json::array();
        nlohmann::json phase_ms = nlohmann::json::array();
        for (const RoundRecord& rec : t.rounds) {
            if (rec.charlie.applied_phase) {
                phase_rounds.push_back(rec.index);
                phase_ms.push_back(rec.charlie.m);
            }
        }
        cast.to(t.reveal_log, Message{3, "charlie", "phase_m_disclosure",
                                      {{"rounds", phase_rounds}, {"m", phase_ms}}});
    }

    // Step 4: sign reveal on the even retained half; outcome pooling on the
    // odd half goes back to the dealer.
    for (RoundRecord& rec : t.rounds) {
        if (prep_is_noon(rec.prep) && rec.charlie.applied_phase) {
            t.retained_for_estimation.push_back(rec.index);
        }
    }
    nlohmann::json sign_rounds = nlohmann::json::array();
    nlohmann::json signs = nlohmann::json::array();
    nlohmann::json outcome_rounds = nlohmann::json::array();
    nlohmann::json pooled = nlohmann::json::array();
    for (std::size_t pos = 0; pos < t.retained_for_estimation.size(); ++pos) {
        RoundRecord& rec = t.rounds[static_cast<std::size_t>(t.retained_for_estimation[pos])];
        if (pos % 2 == 0) {
            rec.usable_for_estimation = true;
            sign_rounds.push_back(rec.index);
            signs.push_back(prep_sign(rec.prep));
        } else {
            outcome_rounds.push_back(rec.index);
            pooled.push_back(rec.outcomes);
        }
    }
    cast.to(t.reveal_log, Message{4, "alice", "sign_reveal",
                                  {{"rounds", sign_rounds}, {"signs", signs}}});
    cast.to(t.reveal_log, Message{4, "parties", "outcome_reveal",
                                  {{"rounds", outcome_rounds}, {"outcomes", pooled}}});
    return t;
}

Bb84Stats bb84_exchange(int qubits, AdversaryStrategy* eve, Rng& rng,
                        std::vector<std::uint8_t>* key_out) {
    if (qubits < 1) throw std::invalid_argument("bb84_exchange: qubits must be >= 1");
    const Spectrum sp;
    if (eve) eve->begin_run(2);
    Bb84Stats s;
    s.qubits = qubits;
    for (int q = 0; q < qubits; ++q) {
        const int a = rng.uniform_int(0, 1);
        const bool alice_x = rng.bernoulli(0.5);
        JointState st = alice_x ? prepare_noon(1, a == 0 ? +1 : -1) : prepare_energy(1, a);
        if (eve) {
            TransitContext ctx{Leg::ToCharlie, q, 0, 1, 0, true, &st, &sp, 0};
            eve->on_probe_transit(ctx, rng);
        }
        const bool bob_x = rng.bernoulli(0.5);
        int b;
        if (bob_x) {
            b = measure_ghz(st, rng, false).outcome == GhzOutcome::Plus ? 0 : 1;
        } else {
            b = static_cast<int>(measure_energy_all(st, rng));
        }
        if (alice_x == bob_x) {
            if (s.sifted % 2 == 0) {
                ++s.sampled;
                if (a != b) ++s.sample_errors;
            } else if (key_out) {
                key_out->push_back(static_cast<std::uint8_t>(a));
            }
            ++s.sifted;
        }
    }
    s.sift_rate = static_cast<double>(s.sifted) / s.qubits;
    s.qber = s.sampled > 0 ? static_cast<double>(s.sample_errors) / s.sampled : 0.0;
    return s;
}

PartyKey bb84_keygen(int length, Rng& rng, AdversaryStrategy* eve, double qber_threshold) {
    if (length < 1) throw std::invalid_argument("bb84_keygen: length must be >= 1");
    PartyKey key;
    long long sampled = 0, errors = 0;
    while (static_cast<int>(key.bits.size()) < length) {
        const int batch = std::max(256, 5 * length);
        const Bb84Stats st = bb84_exchange(batch, eve, rng, &key.bits);
        sampled += st.sampled;
        errors += st.sample_errors;
        key.sampled_qber = sampled > 0 ? static_cast<double>(errors) / sampled : 0.0;
        if (key.sampled_qber > qber_threshold) {
            key.aborted = true;
            return key;
        }
    }
    key.bits.resize(static_cast<std::size_t>(length));
    return key;
}

std::vector<PartyKey> align_keys(const std::vector<PartyKey>& keys) {
    if (keys.size() < 2) throw std::invalid_argument("align_keys: need at least 2 keys");
    const std::size_t len = keys.front().bits.size();
    for (const PartyKey& k : keys) {
        if (k.bits.size() != len) throw std::invalid_argument("align_keys: length mismatch");
    }
    std::vector<PartyKey> out = keys;
    for (std::size_t j = 1; j < out.size(); ++j) {
        out[j].flips_applied.clear();
        for (std::size_t i = 0; i < len; ++i) {
            if (out[j].bits[i] != keys.front().bits[i]) {
                out[j].flips_applied.push_back(static_cast<int>(i));
                out[j].bits[i] = keys.front().bits[i];
            }
        }
    }
    return out;
}

}  // namespace qcm
