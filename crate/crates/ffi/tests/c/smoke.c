#include <math.h>
#include <stdio.h>
#include <string.h>

#include "modelrisk.h"

#define CHECK(call)                                                            \
  do {                                                                         \
    MrStatus s_ = (call);                                                      \
    if (s_ != MR_STATUS_OK) {                                                  \
      fprintf(stderr, "%s failed (%d): %s\n", #call, (int)s_,                  \
              mr_last_error_message());                                        \
      return 1;                                                                \
    }                                                                          \
  } while (0)

int main(void) {
  const char *labels[] = {"none", "cracking", "porosity", "lack_of_penetration"};
  const uint64_t counts[] = {72, 1, 4, 0, 2, 62, 0, 0, 7, 0, 37, 1, 0, 0, 0, 60};
  MrPosterior *post = NULL;
  MrCosts *costs = NULL;
  MrRiskTable *table = NULL;
  double mean[16], manual, threshold, vopi;
  MrRegime regime;

  CHECK(mr_posterior_from_counts(labels, 4, counts, NULL, &post));
  CHECK(mr_posterior_mean(post, mean, 16));
  if (fabs(mean[0] - 73.0 / 81.0) > 1e-12) return 2;

  CHECK(mr_costs_default(&costs));
  CHECK(mr_risk_table_new(post, costs, NULL, 20000, 1, &table));
  CHECK(mr_risk_table_cell(table, "cracking", "manual", &manual, NULL));
  if (manual != 1350.0) return 3;
  CHECK(mr_break_even(table, "hybrid", "manual", "cracking", &threshold, &regime));
  if (regime != MR_REGIME_CHALLENGER_ABOVE || threshold < 0.8 || threshold > 0.95) return 4;
  CHECK(mr_vopi(post, costs, NULL, "none", 2000, 1, 0, &vopi, NULL, NULL, NULL));
  if (vopi != 0.0) return 5;

  if (mr_risk_table_cell(table, "slag", "manual", &manual, NULL) != MR_STATUS_INVALID_ARGUMENT) return 6;
  if (strstr(mr_last_error_message(), "slag") == NULL) return 7;

  mr_risk_table_free(table);
  mr_costs_free(costs);
  mr_posterior_free(post);
  printf("ok %s\n", mr_version());
  return 0;
}
