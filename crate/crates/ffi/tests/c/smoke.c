#include <math.h>
#include <stdio.h>

#include "isoprice.h"

static const char *CONFIG =
    "model = \"linear-bs\"\n"
    "[discretization]\nelements = 64\nknots = \"refined\"\nsteps = 200\n"
    "[leland]\nrate = 0.05\nsigma = 0.2\n";

int main(void) {
    IsopriceConfig *cfg = NULL;
    IsopriceSolution *sol = NULL;
    double s[2] = {90.0, 100.0};
    double v[2];
    double exact;
    char msg[256];

    if (isoprice_config_parse(CONFIG, &cfg) != ISOPRICE_STATUS_OK) {
        isoprice_last_error(msg, sizeof msg);
        fprintf(stderr, "parse: %s\n", msg);
        return 1;
    }
    if (isoprice_solve(cfg, 0, 0, &sol) != ISOPRICE_STATUS_OK) {
        return 2;
    }
    if (isoprice_solution_eval(sol, ISOPRICE_QUANTITY_VALUE, s, 2, v) != ISOPRICE_STATUS_OK) {
        return 3;
    }
    isoprice_bs_call(100.0, 100.0, 0.05, 0.2, 1.0, &exact);
    printf("U(100) = %.6f exact %.6f\n", v[1], exact);
    if (fabs(v[1] - exact) > 0.02) {
        return 4;
    }
    if (isoprice_config_parse("model = 3", &cfg) != ISOPRICE_STATUS_CONFIG || cfg != NULL) {
        return 5;
    }
    isoprice_solution_free(sol);
    return 0;
}
