/*
 * Copyright 2026 The SLSE Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Subject-level records and their CSV formats:
//
//   blows:       subject_id,period_ms,v0,v1,...        (ml, ragged rows)
//   curves:      subject_id,valid_len,volume_0..volume_999,flow_0..flow_999
//   cohort:      subject_id,age,sex,smoke,copd,obesity,hypertension,
//                diabetes,ckd,chd,lhf,vhd,rvef,lvef
//   embeddings:  subject_id,e0..e{d-1}

#ifndef SLSE_COHORT_HPP_
#define SLSE_COHORT_HPP_

#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "slse/common.hpp"
#include "slse/spiro.hpp"

namespace slse::cohort {

using spiro::FlowVolumeCurve;
using spiro::kCurveLength;

struct DemographicVector {
  int age = 55;
  int sex = 0;  // 1 = male
  int smoke = 0;
  int copd = 0;
  // Extended flags; not model inputs unless explicitly enabled.
  int obesity = 0;
  int hypertension = 0;
  int diabetes = 0;
  int ckd = 0;
  int chd = 0;
  int lhf = 0;
  int vhd = 0;

  void Validate() const {
    Require(age >= 18 && age <= 120, ErrorCode::kValidation,
            "age must lie in [18, 120], got " + std::to_string(age));
    for (int flag : {sex, smoke, copd, obesity, hypertension, diabetes, ckd, chd, lhf, vhd}) {
      Require(flag == 0 || flag == 1, ErrorCode::kValidation,
              "demographic flags must be 0/1");
    }
  }

  friend bool operator==(const DemographicVector&, const DemographicVector&) = default;
};

inline const std::vector<std::string>& BaseDemographicNames() {
  static const std::vector<std::string> names = {"age", "sex", "smoke", "copd"};
  return names;
}

inline const std::vector<std::string>& ExtendedFlagNames() {
  static const std::vector<std::string> names = {"obesity", "hypertension", "diabetes",
                                                 "ckd",     "chd",          "lhf",
                                                 "vhd"};
  return names;
}

inline std::vector<double> DemographicFeatures(const DemographicVector& d, bool extended) {
  std::vector<double> out = {static_cast<double>(d.age), static_cast<double>(d.sex),
                             static_cast<double>(d.smoke), static_cast<double>(d.copd)};
  if (extended) {
    for (int f : {d.obesity, d.hypertension, d.diabetes, d.ckd, d.chd, d.lhf, d.vhd}) {
      out.push_back(static_cast<double>(f));
    }
  }
  return out;
}

inline int FlagByName(const DemographicVector& d, const std::string& name) {
  if (name == "sex") return d.sex;
  if (name == "smoke") return d.smoke;
  if (name == "copd") return d.copd;
  if (name == "obesity") return d.obesity;
  if (name == "hypertension") return d.hypertension;
  if (name == "diabetes") return d.diabetes;
  if (name == "ckd") return d.ckd;
  if (name == "chd") return d.chd;
  if (name == "lhf") return d.lhf;
  if (name == "vhd") return d.vhd;
  throw Error(ErrorCode::kValidation, "unknown demographic flag '" + name + "'");
}

// ---------------------------------------------------------------------------
// Labels
// ---------------------------------------------------------------------------

struct LabelRule {
  double rvef_threshold = 45.0;
  bool rvef_inclusive = true;  // rvef == threshold counts as RHF
  double lvef_threshold = 50.0;  // lvef strictly below is LHF
};

struct Labels {
  int rhf = 0;
  int lhf = 0;
};

inline Labels DeriveLabels(std::optional<double> rvef, std::optional<double> lvef,
                           const LabelRule& rule = {}) {
  Labels out;
  if (rvef) {
    Require(*rvef > 0 && *rvef <= 100, ErrorCode::kValidation,
            "RVEF must lie in (0, 100]");
    out.rhf = rule.rvef_inclusive ? (*rvef <= rule.rvef_threshold)
                                  : (*rvef < rule.rvef_threshold);
  }
  if (lvef) {
    Require(*lvef > 0 && *lvef <= 100, ErrorCode::kValidation,
            "LVEF must lie in (0, 100]");
    out.lhf = *lvef < rule.lvef_threshold;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rows and records
// ---------------------------------------------------------------------------

struct CohortRow {
  std::string subject_id;
  DemographicVector demo;
  std::optional<double> rvef;
  std::optional<double> lvef;
};

struct RawBlow {
  std::string subject_id;
  double period_ms = 10.0;
  std::vector<double> samples_ml;
};

struct SubjectRecord {
  FlowVolumeCurve curve;
  DemographicVector demo;
  std::optional<double> rvef;
  std::optional<double> lvef;
  int label_rhf = 0;
  int label_lhf = 0;

  const std::string& subject_id() const { return curve.subject_id; }
};

inline spiro::VolumeTimeSeries ToVolumeTimeSeries(const RawBlow& blow) {
  Require(blow.period_ms > 0, ErrorCode::kValidation, "period_ms must be positive");
  return {blow.subject_id, spiro::MlToLiters(blow.samples_ml), blow.period_ms / 1000.0};
}

struct PreprocessResult {
  std::vector<FlowVolumeCurve> curves;  // one per subject, first accepted blow
  std::vector<std::pair<std::string, spiro::RejectReason>> rejected;
};

// Keeps the earliest accepted blow per subject, in first-seen subject order.
inline PreprocessResult Preprocess(const std::vector<RawBlow>& blows,
                                   const spiro::BlowValidityRule& rule = {}) {
  PreprocessResult out;
  std::map<std::string, bool> done;
  for (const RawBlow& blow : blows) {
    if (done[blow.subject_id]) continue;
    spiro::VolumeTimeSeries vt;
    try {
      vt = ToVolumeTimeSeries(blow);
    } catch (const Error&) {
      out.rejected.emplace_back(blow.subject_id, spiro::RejectReason::kNonFinite);
      continue;
    }
    const spiro::BlowVerdict verdict = spiro::CheckBlowValidity(vt, rule);
    if (!verdict.accepted()) {
      out.rejected.emplace_back(blow.subject_id, verdict.reason);
      continue;
    }
    out.curves.push_back(spiro::MakeFlowVolume(vt, rule));
    done[blow.subject_id] = true;
  }
  return out;
}

// Joins curves to cohort rows by subject id. Subjects lacking either side,
// or lacking an RVEF measurement, are dropped.
inline std::vector<SubjectRecord> JoinRecords(const std::vector<CohortRow>& rows,
                                              const std::vector<FlowVolumeCurve>& curves,
                                              const LabelRule& rule = {}) {
  std::map<std::string, const FlowVolumeCurve*> by_id;
  for (const auto& c : curves) by_id[c.subject_id] = &c;
  std::vector<SubjectRecord> out;
  for (const CohortRow& row : rows) {
    const auto it = by_id.find(row.subject_id);
    if (it == by_id.end() || !row.rvef) continue;
    SubjectRecord r;
    r.curve = *it->second;
    r.demo = row.demo;
    r.rvef = row.rvef;
    r.lvef = row.lvef;
    const Labels labels = DeriveLabels(row.rvef, row.lvef, rule);
    r.label_rhf = labels.rhf;
    r.label_lhf = labels.lhf;
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

namespace internal {

inline std::vector<std::string> Lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(std::move(line));
  }
  return lines;
}

inline std::string FixedMl(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

}  // namespace internal

inline std::string BlowsToCsv(const std::vector<RawBlow>& blows) {
  std::size_t longest = 0;
  for (const auto& b : blows) longest = std::max(longest, b.samples_ml.size());
  std::string out = "subject_id,period_ms";
  for (std::size_t i = 0; i < longest; ++i) out += ",v" + std::to_string(i);
  out += "\n";
  for (const auto& b : blows) {
    out += b.subject_id + "," + FormatDouble(b.period_ms);
    for (double v : b.samples_ml) out += "," + internal::FixedMl(v);
    out += "\n";
  }
  return out;
}

inline std::vector<RawBlow> BlowsFromCsv(const std::string& text) {
  std::vector<RawBlow> blows;
  const auto lines = internal::Lines(text);
  for (std::size_t li = 0; li < lines.size(); ++li) {
    if (li == 0 && lines[li].rfind("subject_id", 0) == 0) continue;
    const auto fields = io::SplitCsvLine(lines[li]);
    const std::string ctx = "blows line " + std::to_string(li + 1);
    Require(fields.size() >= 3, ErrorCode::kValidation, ctx + ": too few fields");
    RawBlow b;
    b.subject_id = fields[0];
    b.period_ms = io::ParseDouble(fields[1], ctx);
    for (std::size_t i = 2; i < fields.size(); ++i) {
      if (fields[i].empty()) break;  // trailing padding columns
      b.samples_ml.push_back(io::ParseDouble(fields[i], ctx));
    }
    blows.push_back(std::move(b));
  }
  return blows;
}

inline std::string CurvesToCsv(const std::vector<FlowVolumeCurve>& curves) {
  std::string out = "subject_id,valid_len";
  for (std::size_t i = 0; i < kCurveLength; ++i) out += ",volume_" + std::to_string(i);
  for (std::size_t i = 0; i < kCurveLength; ++i) out += ",flow_" + std::to_string(i);
  out += "\n";
  for (const auto& c : curves) {
    out += c.subject_id + "," + std::to_string(c.valid_len);
    for (double v : c.volume) out += "," + FormatDouble(v);
    for (double v : c.flow) out += "," + FormatDouble(v);
    out += "\n";
  }
  return out;
}

inline std::vector<FlowVolumeCurve> CurvesFromCsv(const std::string& text) {
  std::vector<FlowVolumeCurve> curves;
  const auto lines = internal::Lines(text);
  Require(!lines.empty() && lines[0].rfind("subject_id,valid_len", 0) == 0,
          ErrorCode::kFormat, "curve CSV header missing");
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const auto fields = io::SplitCsvLine(lines[li]);
    const std::string ctx = "curves line " + std::to_string(li + 1);
    Require(fields.size() == 2 + 2 * kCurveLength, ErrorCode::kValidation,
            ctx + ": expected " + std::to_string(2 + 2 * kCurveLength) + " fields");
    FlowVolumeCurve c;
    c.subject_id = fields[0];
    const long long valid = io::ParseInt(fields[1], ctx);
    Require(valid > 0 && valid <= static_cast<long long>(kCurveLength),
            ErrorCode::kValidation, ctx + ": valid_len out of range");
    c.valid_len = static_cast<std::size_t>(valid);
    for (std::size_t i = 0; i < kCurveLength; ++i) {
      c.volume[i] = io::ParseDouble(fields[2 + i], ctx);
      c.flow[i] = io::ParseDouble(fields[2 + kCurveLength + i], ctx);
    }
    c.Validate();
    curves.push_back(std::move(c));
  }
  return curves;
}

inline std::string CohortToCsv(const std::vector<CohortRow>& rows) {
  std::string out = "subject_id,age,sex,smoke,copd";
  for (const auto& n : ExtendedFlagNames()) out += "," + n;
  out += ",rvef,lvef\n";
  for (const auto& r : rows) {
    const DemographicVector& d = r.demo;
    out += r.subject_id;
    for (int v : {d.age, d.sex, d.smoke, d.copd, d.obesity, d.hypertension, d.diabetes,
                  d.ckd, d.chd, d.lhf, d.vhd}) {
      out += "," + std::to_string(v);
    }
    out += "," + (r.rvef ? FormatDouble(*r.rvef) : std::string());
    out += "," + (r.lvef ? FormatDouble(*r.lvef) : std::string());
    out += "\n";
  }
  return out;
}

inline std::vector<CohortRow> CohortFromCsv(const std::string& text) {
  const auto lines = internal::Lines(text);
  Require(!lines.empty(), ErrorCode::kFormat, "cohort CSV is empty");
  const auto header = io::SplitCsvLine(lines[0]);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const char* required : {"subject_id", "age", "sex", "smoke", "copd", "rvef", "lvef"}) {
    Require(col.count(required) > 0, ErrorCode::kFormat,
            std::string("cohort CSV lacks column '") + required + "'");
  }
  std::vector<CohortRow> rows;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const auto f = io::SplitCsvLine(lines[li]);
    const std::string ctx = "cohort line " + std::to_string(li + 1);
    Require(f.size() == header.size(), ErrorCode::kValidation, ctx + ": field count");
    auto flag = [&](const std::string& name) -> int {
      const auto it = col.find(name);
      if (it == col.end()) return 0;
      return static_cast<int>(io::ParseInt(f[it->second], ctx));
    };
    CohortRow r;
    r.subject_id = f[col["subject_id"]];
    r.demo.age = flag("age");
    r.demo.sex = flag("sex");
    r.demo.smoke = flag("smoke");
    r.demo.copd = flag("copd");
    r.demo.obesity = flag("obesity");
    r.demo.hypertension = flag("hypertension");
    r.demo.diabetes = flag("diabetes");
    r.demo.ckd = flag("ckd");
    r.demo.chd = flag("chd");
    r.demo.lhf = flag("lhf");
    r.demo.vhd = flag("vhd");
    r.demo.Validate();
    if (!f[col["rvef"]].empty()) r.rvef = io::ParseDouble(f[col["rvef"]], ctx);
    if (!f[col["lvef"]].empty()) r.lvef = io::ParseDouble(f[col["lvef"]], ctx);
    rows.push_back(std::move(r));
  }
  return rows;
}

inline std::string EmbeddingsToCsv(const std::vector<std::string>& ids,
                                   const std::vector<std::vector<double>>& embeddings) {
  Require(ids.size() == embeddings.size(), ErrorCode::kShape, "id/embedding count mismatch");
  std::string out = "subject_id";
  const std::size_t dim = embeddings.empty() ? 0 : embeddings[0].size();
  for (std::size_t i = 0; i < dim; ++i) out += ",e" + std::to_string(i);
  out += "\n";
  for (std::size_t r = 0; r < ids.size(); ++r) {
    out += ids[r];
    for (double v : embeddings[r]) out += "," + FormatDouble(v);
    out += "\n";
  }
  return out;
}

}  // namespace slse::cohort

#endif  // SLSE_COHORT_HPP_
