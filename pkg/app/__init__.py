# QShard: parameter-parallel training of a noisy variational classifier
