#pragma once
// Per-step training/eval records and their CSV form.

#include <string>
#include <vector>

namespace flm {

struct MetricsRow {
  long step = 0;
  std::string split;      // "train" | "val"
  std::string objective;
  double loss_total = 0, loss_R = 0, loss_l2r = 0, loss_r2l = 0;
  double recon_acc = 0;
  double r_pred = 0, r_corr = 0;
  double lr = 0;
  double wall_clock_s = 0;
};

struct RunMetrics {
  std::vector<MetricsRow> rows;

  static const char* csv_header();
  std::string to_csv() const;
  // CSV with the wall-clock column blanked; used by determinism checks,
  // since wall time is the one physically nondeterministic column.
  std::string to_csv_no_wallclock() const;
};

std::string format_double(double v);

}  // namespace flm
