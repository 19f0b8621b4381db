#pragma once

#include <string>

#include "qcm/adversary.hpp"
#include "qcm/estimator.hpp"
#include "qcm/protocol.hpp"

namespace qcm {

inline constexpr const char* kTranscriptSchema = "qcmsim-transcript-v1";

std::string to_string(PrepKind k);
PrepKind prep_kind_from_string(const std::string& s);
std::string to_string(DecoyCheck c);
DecoyCheck decoy_check_from_string(const std::string& s);

void to_json(nlohmann::json& j, const Spectrum& s);
void from_json(const nlohmann::json& j, Spectrum& s);
void to_json(nlohmann::json& j, const ProtocolParams& p);
void from_json(const nlohmann::json& j, ProtocolParams& p);
void to_json(nlohmann::json& j, const CharlieAction& a);
void from_json(const nlohmann::json& j, CharlieAction& a);
void to_json(nlohmann::json& j, const TamperRecord& r);
void from_json(const nlohmann::json& j, TamperRecord& r);
void to_json(nlohmann::json& j, const Message& m);
void from_json(const nlohmann::json& j, Message& m);
void to_json(nlohmann::json& j, const RoundRecord& r);
void from_json(const nlohmann::json& j, RoundRecord& r);
void to_json(nlohmann::json& j, const PartyKey& k);
void from_json(const nlohmann::json& j, PartyKey& k);
void to_json(nlohmann::json& j, const Bb84Stats& s);
void to_json(nlohmann::json& j, const Expectation& e);
void to_json(nlohmann::json& j, const LadderLevel& l);
void to_json(nlohmann::json& j, const EstimationResult& r);
void to_json(nlohmann::json& j, const EveReport& r);

// Top-level transcript (de)serialization carries a schema tag so stored
// artifacts stay self-describing.
nlohmann::json transcript_to_json(const Transcript& t);
Transcript transcript_from_json(const nlohmann::json& j);

// Stable rendering: 2-space indent, keys sorted (the json object type is an
// ordered map), trailing newline. Golden files and reports both use this.
std::string canonical_dump(const nlohmann::json& j);

}  // namespace qcm
