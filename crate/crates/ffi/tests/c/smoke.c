/* Loads a checkpoint and a dataset through the public header and scores it. */
#include <stdio.h>
#include <string.h>

#include "resact.h"

#define CHECK(cond)                                                     \
    do {                                                                \
        if (!(cond)) {                                                  \
            const char *e = resact_last_error();                        \
            fprintf(stderr, "line %d: %s (%s)\n", __LINE__, #cond,      \
                    e ? e : "no error");                                \
            return 1;                                                   \
        }                                                               \
    } while (0)

int main(int argc, char **argv) {
    if (argc != 3) {
        fprintf(stderr, "usage: smoke CHECKPOINT DATASET\n");
        return 2;
    }
    printf("version %s\n", resact_version());

    ResactModel *model = NULL;
    CHECK(resact_model_load("/nonexistent", 0, &model) == RESACT_STATUS_IO);
    CHECK(model == NULL && resact_last_error() != NULL);
    CHECK(resact_model_load(argv[1], 0, &model) == RESACT_STATUS_OK);

    ResactDataset *ds = NULL;
    CHECK(resact_dataset_load(argv[2], &ds) == RESACT_STATUS_OK);
    CHECK(resact_dataset_len(ds) > 0);

    size_t sd = resact_model_state_dim(model), ad = resact_model_action_dim(model);
    double state[256] = {0};
    double action[64];
    CHECK(sd <= 256 && ad <= 64);
    CHECK(resact_model_act(model, state, 1, 7, action, ad) == RESACT_STATUS_OK);
    for (size_t j = 0; j < ad; j++) CHECK(action[j] >= -1.0 && action[j] <= 1.0);
    CHECK(resact_model_act(model, state, 1, 7, action, 0) == RESACT_STATUS_BUFFER_TOO_SMALL);

    ResactNcisReport report;
    memset(&report, 0, sizeof report);
    CHECK(resact_evaluate(model, ds, 10.0, 0.2, 0, &report) == RESACT_STATUS_OK);
    CHECK(report.n_trajectories > 0 && report.ess > 0.0);
    printf("ncis %.6f ess %.3f clip %.4f\n", report.ncis, report.ess, report.clip_fraction);

    uint8_t level = 0;
    CHECK(resact_reward_session_length(8, 4.0, &level) == RESACT_STATUS_OK && level == 2);

    resact_dataset_free(ds);
    resact_model_free(model);
    return 0;
}
