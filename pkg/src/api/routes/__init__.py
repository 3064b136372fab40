# Routes Module
