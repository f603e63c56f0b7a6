#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "unfold/errors.hpp"
#include "unfold/inference.hpp"
#include "unfold/metrics.hpp"
#include "unfold/training.hpp"

namespace unfold {

// Every CSV artifact names the producing config hash on its first line.
inline std::ofstream open_csv(const std::filesystem::path& path, const std::string& config_hash) {
  std::ofstream out(path);
  if (!out) throw StateError("cannot write " + path.string());
  out << "# config_hash=" << config_hash << "\n";
  out.precision(17);
  return out;
}

inline void write_train_record_csv(const std::filesystem::path& path, const TrainRecord& rec,
                                   const std::string& config_hash) {
  auto out = open_csv(path, config_hash);
  out << "t,phase,step,J1,J2,gp_mean,val_nmse\n";
  for (const auto& r : rec.rows) {
    out << r.t << "," << r.phase << "," << r.step << "," << r.J1 << "," << r.J2 << "," << r.gp_mean
        << ",";
    for (std::size_t i = 0; i < r.val_nmse.size(); ++i) out << (i ? ";" : "") << r.val_nmse[i];
    out << "\n";
  }
}

inline void write_trace_csv(const std::filesystem::path& path, const ReconResult& res,
                            const std::string& config_hash) {
  auto out = open_csv(path, config_hash);
  out << "k,residual,penalty,criterion\n";
  for (std::size_t k = 0; k < res.trace.size(); ++k)
    out << res.trace[k].k << "," << res.trace[k].residual << "," << res.trace[k].penalty << ","
        << res.criterion[k] << "\n";
}

inline void write_curve_csv(const std::filesystem::path& path, const std::vector<CurveSeries>& curves,
                            const std::string& config_hash) {
  auto out = open_csv(path, config_hash);
  out << "label,k,value\n";
  for (const auto& c : curves)
    for (const auto& [k, v] : c.points) out << c.label << "," << k << "," << v << "\n";
}

}  // namespace unfold
