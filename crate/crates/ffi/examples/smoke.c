#include <stdio.h>
#include "spgan.h"
int main(void) {
    SpganModel *m = NULL;
    SpganStatus s = spgan_model_load("/nonexistent.spck", &m);
    printf("version %s status %d err %s\n", spgan_version(), (int)s, spgan_last_error());
    float a[2] = {0, 0}, b[2] = {2, 4}, o[2];
    s = spgan_interp_codes(a, b, 2, 0.5, o);
    printf("%d %g %g\n", (int)s, o[0], o[1]);
    return s == SPGAN_STATUS_OK ? 0 : 1;
}
