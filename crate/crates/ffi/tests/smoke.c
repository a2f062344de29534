#include <stdio.h>
#include <string.h>
#include "cabinet.h"

int main(void) {
    CabinetScheme *s = NULL;
    if (cabinet_scheme_new(7, 2, &s) != CABINET_STATUS_OK) return 1;
    double w[7];
    if (cabinet_scheme_weights(s, w, 7) != CABINET_STATUS_OK) return 2;
    double ct, r;
    cabinet_scheme_params(s, &ct, &r);
    CabinetViolation v;
    cabinet_validate_scheme(w, 7, ct, 2, &v);
    if (v != CABINET_VIOLATION_NONE) return 3;
    cabinet_scheme_free(s);

    if (cabinet_scheme_new(7, 5, &s) != CABINET_STATUS_INVALID_ARGUMENT) return 4;
    char msg[256];
    cabinet_last_error(msg, sizeof msg, NULL);

    CabinetSim *sim = NULL;
    if (cabinet_sim_new("n = 5\nt = 1\nrounds = 5\n", &sim) != CABINET_STATUS_OK) return 5;
    if (cabinet_sim_run(sim) != CABINET_STATUS_OK) return 6;
    if (cabinet_sim_rounds(sim) != 5) return 7;
    cabinet_sim_free(sim);
    printf("ok %s %s\n", cabinet_status_str(CABINET_STATUS_OK), msg);
    return 0;
}
