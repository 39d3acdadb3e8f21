# Report figures
