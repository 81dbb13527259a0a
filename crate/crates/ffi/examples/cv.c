/* Prints the coefficient of variation and 90% interval of an estimate. */
#include <stdio.h>
#include <stdlib.h>

#include "acs.h"

int main(int argc, char **argv) {
    if (argc != 3) {
        fprintf(stderr, "usage: %s ESTIMATE MOE\n", argv[0]);
        return 2;
    }
    double estimate = atof(argv[1]);
    double moe = atof(argv[2]);
    double cv, lo, hi;
    if (acs_coefficient_of_variation(estimate, moe, &cv) != ACS_STATUS_OK ||
        acs_confidence_interval(estimate, moe, &lo, &hi) != ACS_STATUS_OK) {
        fprintf(stderr, "error: %s\n", acs_last_error());
        return 1;
    }
    printf("cv=%.1f ci=%g..%g\n", cv, lo, hi);
    return 0;
}
